"""Braille-line document pager.

Shows one display-width window of the current line and navigates with
braille keys: LineUp/LineDown move between lines, PanLeft/PanRight shift
the window sideways by one display width, Top/Bottom jump to the first or
last line, Home quits.  On quit the position is saved to ``<file>.pos``
(``line <n> col <m>``, 1-based line, 0-based column) and restored on the
next run.

Tabs count as 4 spaces; lines are capped at 4096 columns.

Exit codes: 0 normal quit, 1 unreadable file or connection error.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from braillemux import client, proto
from braillemux.drivers import Command
from braillemux.tools.common import add_connection_args, connect, parse_path

MAX_LINE_COLS = 4096
TAB = "    "

_POS_RE = re.compile(r"^line (\d+) col (\d+)\s*$")


def load_lines(text: str) -> List[str]:
    lines = [line.replace("\t", TAB)[:MAX_LINE_COLS] for line in text.splitlines()]
    return lines or [""]


class PagerModel:
    """Pure navigation state: (line, col) plus the rules for moving it.

    ``col`` is the window start within the current line; panning moves it
    in whole display widths.  Every mutator returns whether the visible
    window may have changed.
    """

    def __init__(self, lines: List[str], cols: int):
        if cols < 1:
            raise ValueError("cols must be at least 1")
        self.lines = lines or [""]
        self.cols = cols
        self.line = 0
        self.col = 0

    def window(self) -> str:
        return self.lines[self.line][self.col : self.col + self.cols]

    def restore(self, line: int, col: int) -> None:
        self.line = max(0, min(line, len(self.lines) - 1))
        self.col = max(0, min(col, MAX_LINE_COLS))

    def apply(self, command: int, arg: int = 0) -> bool:
        if command == Command.LINE_UP:
            if self.line > 0:
                self.line -= 1
                return True
        elif command == Command.LINE_DOWN:
            if self.line < len(self.lines) - 1:
                self.line += 1
                return True
        elif command == Command.PAN_LEFT:
            if self.col > 0:
                self.col = max(0, self.col - self.cols)
                return True
        elif command == Command.PAN_RIGHT:
            if self.col + self.cols < len(self.lines[self.line]):
                self.col += self.cols
                return True
        elif command == Command.TOP:
            if (self.line, self.col) != (0, 0):
                self.line, self.col = 0, 0
                return True
        elif command == Command.BOTTOM:
            target = (len(self.lines) - 1, 0)
            if (self.line, self.col) != target:
                self.line, self.col = target
                return True
        return False  # Route and unknown commands are no-ops


def parse_pos(text: str) -> Optional[Tuple[int, int]]:
    match = _POS_RE.match(text)
    if match is None:
        return None
    return int(match.group(1)), int(match.group(2))


def format_pos(line: int, col: int) -> str:
    return f"line {line + 1} col {col}\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bpager", description="page through a file on the braille line"
    )
    add_connection_args(parser)
    parser.add_argument(
        "--path", type=parse_path, default=(1,), help="focus path to bind (default 1)"
    )
    parser.add_argument("file", help="file to display")
    args = parser.parse_args(argv)

    path = Path(args.file)
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        print(f"bpager: {exc}", file=sys.stderr)
        return 1
    pos_path = Path(str(path) + ".pos")

    try:
        conn = connect(args)
    except client.ClientError as exc:
        print(f"bpager: {exc}", file=sys.stderr)
        return 1
    try:
        cols, _rows = conn.get_display_size()
        model = PagerModel(load_lines(text), cols)
        if pos_path.exists():
            saved = parse_pos(pos_path.read_text(encoding="utf-8"))
            if saved is not None:
                model.restore(saved[0] - 1, saved[1])
        conn.enter_tty_mode(args.path)
        conn.write_text(model.window())
        while True:
            event = conn.read_key(timeout=None)
            if event is None or event.kind != proto.KEY_COMMANDS:
                continue
            if event.code == Command.HOME:
                pos_path.write_text(
                    format_pos(model.line, model.col), encoding="utf-8"
                )
                break
            if model.apply(event.code, event.arg):
                conn.write_text(model.window())
        conn.leave_tty_mode()
        return 0
    except client.ClientError as exc:
        print(f"bpager: {exc}", file=sys.stderr)
        return 1
    finally:
        conn.close()


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
