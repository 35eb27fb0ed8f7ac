"""Braille cell model, character translation tables, and display buffers.

A cell is one u8 bit mask: bit (i-1) set means dot i is raised, dots numbered
1..8.  0x00 is the blank cell.  The same bit assignment is used by the
Unicode braille block, so cell value ``c`` renders as code point U+2800+c.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Mapping, Optional

UNICODE_BRAILLE_BASE = 0x2800

# Unmapped characters render as a full cell: visibly distinct from blank,
# so translation gaps never hide as spaces.
FALLBACK_CELL = 0xFF


class TableParseError(ValueError):
    """A braille table file could not be parsed."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class BadCursorError(ValueError):
    """Cursor index points beyond the rendered row."""


@dataclass(frozen=True)
class CellBuffer:
    """Rectangular display image, row-major, with an optional cursor.

    ``cursor`` is a 1-based cell index into the whole buffer.
    """

    cols: int
    rows: int
    cells: bytes
    cursor: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "cells", bytes(self.cells))
        if self.cols < 1 or self.rows < 1:
            raise ValueError("buffer dimensions must be at least 1x1")
        if len(self.cells) != self.cols * self.rows:
            raise ValueError(
                f"expected {self.cols * self.rows} cells, got {len(self.cells)}"
            )
        if self.cursor is not None and not 1 <= self.cursor <= self.cols * self.rows:
            raise ValueError(f"cursor {self.cursor} outside buffer")

    @classmethod
    def blank(cls, cols: int, rows: int = 1) -> "CellBuffer":
        return cls(cols, rows, bytes(cols * rows))


@dataclass(frozen=True)
class BrailleTable:
    """Maps Unicode code points to cell patterns."""

    entries: Mapping[int, int]
    fallback: int = FALLBACK_CELL

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))

    def lookup(self, code_point: int) -> int:
        return self.entries.get(code_point, self.fallback)


def char_to_cell(table: BrailleTable, char: "str | int") -> int:
    """Translate one character (or code point) to its cell pattern."""
    cp = ord(char) if isinstance(char, str) else char
    return table.lookup(cp)


def cell_to_unicode(cell: int) -> int:
    """Code point of the braille-block character showing this cell."""
    if not 0 <= cell <= 0xFF:
        raise ValueError(f"cell pattern out of range: {cell}")
    return UNICODE_BRAILLE_BASE + cell


def cells_to_text(cells: bytes) -> str:
    """Render raw cell patterns as a string of braille-block characters."""
    return "".join(chr(cell_to_unicode(c)) for c in cells)


def render_text(
    table: BrailleTable, text: str, cols: int, cursor: int = 0
) -> CellBuffer:
    """Render ``text`` into one display row of ``cols`` cells.

    The first ``cols`` code points are translated, the rest of the row is
    blank-padded.  ``cursor`` 0 means no cursor; otherwise it is a 1-based
    cell index and must not exceed ``cols``.
    """
    if cols < 1:
        raise ValueError("cols must be at least 1")
    if cursor != 0 and cursor > cols:
        raise BadCursorError(f"cursor {cursor} beyond {cols}-cell row")
    cells = bytearray(cols)
    for i, char in enumerate(text[:cols]):
        cells[i] = table.lookup(ord(char))
    return CellBuffer(cols, 1, bytes(cells), cursor if cursor else None)


_ENTRY_RE = re.compile(r"^U\+([0-9A-Fa-f]{1,6})\s*=\s*(.*)$")


def parse_table(text: str, fallback: int = FALLBACK_CELL) -> BrailleTable:
    """Parse a braille table from its file text.

    One entry per line: ``U+XXXX = d-d-...`` with dots 1..8 (an empty dot
    list means the blank cell).  ``#`` starts a comment; blank lines are
    ignored.  A repeated code point keeps the last entry.
    """
    entries: dict[int, int] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        match = _ENTRY_RE.match(line)
        if not match:
            raise TableParseError(f"expected 'U+XXXX = dots', got {line!r}", line_no)
        code_point = int(match.group(1), 16)
        dots_field = match.group(2).strip()
        mask = 0
        if dots_field:
            for part in dots_field.split("-"):
                if not part.isdigit() or not 1 <= int(part) <= 8:
                    raise TableParseError(f"bad dot {part!r}", line_no)
                mask |= 1 << (int(part) - 1)
        entries[code_point] = mask
    return BrailleTable(entries, fallback)


def dump_table(table: BrailleTable) -> str:
    """Serialize entries back to the table file format."""
    lines = []
    for code_point in sorted(table.entries):
        mask = table.entries[code_point]
        dots = "-".join(str(i + 1) for i in range(8) if mask & (1 << i))
        lines.append(f"U+{code_point:04X} = {dots}".rstrip())
    return "\n".join(lines) + "\n"


def load_table(path) -> BrailleTable:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_table(fh.read())


@lru_cache(maxsize=1)
def default_table() -> BrailleTable:
    """The shipped 8-dot computer braille table (covers U+0020..U+007E)."""
    text = resources.files("braillemux").joinpath("tables/default.tbl").read_text()
    return parse_table(text)
