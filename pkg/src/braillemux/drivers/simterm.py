"""Terminal-backed simulated braille device.

Renders each cell image as one line of Unicode braille characters on the
controlling terminal (cursor cell underlined) and maps ordinary keyboard
input to device keycodes:

    Up / Down / Left / Right   0x01 / 0x02 / 0x03 / 0x04
    Home                       0x05
    PgUp / PgDn                0x06 / 0x07
    digits 1..9                routing keys 0x100..0x108

No raw packet support. Requires an interactive terminal; the rendering and
key-decoding helpers are pure functions so they stay testable without one.
"""

from __future__ import annotations

import os
import sys
import threading
from pathlib import Path
from typing import List, Optional, Tuple

from braillemux.braille import CellBuffer, cell_to_unicode
from braillemux.drivers import (
    ConfigError,
    Driver,
    DriverClosedError,
    DriverError,
    DriverSpec,
    KeyPressed,
    KeyTranslationTable,
    NotATtyError,
    ROUTING_BASE,
    default_key_table,
)

_UNDERLINE, _NO_UNDERLINE = "\x1b[4m", "\x1b[24m"

_SEQUENCES = {
    b"\x1b[A": 0x01,
    b"\x1b[B": 0x02,
    b"\x1b[D": 0x03,
    b"\x1b[C": 0x04,
    b"\x1b[H": 0x05,
    b"\x1bOH": 0x05,
    b"\x1b[1~": 0x05,
    b"\x1b[5~": 0x06,
    b"\x1b[6~": 0x07,
}


def format_line(buffer: CellBuffer) -> str:
    """Render a cell image as Unicode braille, underlining the cursor cell."""
    chars = [chr(cell_to_unicode(c)) for c in buffer.cells]
    if buffer.cursor is not None:
        i = buffer.cursor - 1
        chars[i] = _UNDERLINE + chars[i] + _NO_UNDERLINE
    rows = [
        "".join(chars[r * buffer.cols : (r + 1) * buffer.cols])
        for r in range(buffer.rows)
    ]
    return " ".join(rows)


def parse_key_input(data: bytes) -> Tuple[List[int], bytes]:
    """Decode terminal input bytes into device keycodes.

    Returns the decoded keycodes plus any trailing bytes that form an
    incomplete escape sequence (feed them back in with the next read).
    Unrecognized bytes are discarded.
    """
    codes: List[int] = []
    i, n = 0, len(data)
    while i < n:
        b = data[i]
        if 0x31 <= b <= 0x39:  # '1'..'9'
            codes.append(ROUTING_BASE + (b - 0x31))
            i += 1
            continue
        if b == 0x1B:
            rest = bytes(data[i:])
            match = None
            partial = False
            for seq, code in _SEQUENCES.items():
                if rest.startswith(seq):
                    if match is None or len(seq) > match[1]:
                        match = (code, len(seq))
                elif seq.startswith(rest):
                    partial = True
            if match is not None:
                codes.append(match[0])
                i += match[1]
                continue
            if partial:
                return codes, rest
        i += 1
    return codes, b""


def _parse_config(path) -> dict[str, str]:
    values = {"name": "simterm", "cols": "40", "rows": "1"}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        if key not in values:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = value
    return values


class SimTermDriver(Driver):
    def __init__(self, name: str = "simterm", cols: int = 40, rows: int = 1):
        keycodes = frozenset(range(0x01, 0x08)) | frozenset(
            range(ROUTING_BASE, ROUTING_BASE + min(cols, 9))
        )
        try:
            self._spec = DriverSpec(name, cols, rows, False, keycodes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self._key_table = default_key_table(cols)
        self._open = False
        self._stop = threading.Event()
        self._reader: Optional[threading.Thread] = None
        self._saved_termios = None

    @classmethod
    def from_config(cls, path=None) -> "SimTermDriver":
        if path is None:
            return cls()
        values = _parse_config(path)
        try:
            return cls(values["name"], int(values["cols"]), int(values["rows"]))
        except ValueError as exc:
            raise ConfigError(f"cols/rows must be integers: {exc}") from exc

    @property
    def spec(self) -> DriverSpec:
        return self._spec

    @property
    def key_table(self) -> KeyTranslationTable:
        return self._key_table

    @property
    def is_open(self) -> bool:
        return self._open

    def open(self) -> None:
        if self._open:
            raise DriverError("device already open")
        if not (sys.stdin.isatty() and sys.stdout.isatty()):
            raise NotATtyError("simterm needs an interactive terminal")
        import termios
        import tty

        fd = sys.stdin.fileno()
        self._saved_termios = termios.tcgetattr(fd)
        tty.setcbreak(fd)
        self._open = True
        if self._reader is None:
            self._reader = threading.Thread(
                target=self._read_keys, name="simterm-keys", daemon=True
            )
            self._reader.start()

    def close(self) -> None:
        if not self._open:
            return
        self._open = False
        if self._saved_termios is not None:
            import termios

            termios.tcsetattr(
                sys.stdin.fileno(), termios.TCSADRAIN, self._saved_termios
            )
            self._saved_termios = None
        sys.stdout.write("\r\n")
        sys.stdout.flush()

    def shutdown(self) -> None:
        self.close()
        self._stop.set()

    def write_cells(self, buffer: CellBuffer) -> None:
        if not self._open:
            raise DriverClosedError("write_cells on closed device")
        spec = self._spec
        if (buffer.cols, buffer.rows) != (spec.cols, spec.rows):
            raise DriverError(
                f"buffer is {buffer.cols}x{buffer.rows}, device is "
                f"{spec.cols}x{spec.rows}"
            )
        sys.stdout.write("\r\x1b[K" + format_line(buffer))
        sys.stdout.flush()

    def _read_keys(self) -> None:
        fd = sys.stdin.fileno()
        pending = b""
        while not self._stop.is_set():
            try:
                chunk = os.read(fd, 64)
            except OSError:
                return
            if not chunk:
                return
            codes, pending = parse_key_input(pending + chunk)
            if not self._open:
                continue  # input while suspended is dropped
            for code in codes:
                self._emit(KeyPressed(code))
