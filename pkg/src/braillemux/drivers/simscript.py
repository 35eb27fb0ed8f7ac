"""Scripted simulated braille device.

Deterministic stand-in for real hardware: every operation is appended to a
log file that doubles as a golden record, and key presses are injected by
writing lines to a command file the driver tails.

Config file, ``key = value`` per line (# comments allowed):

    name  = simscript      # device name (default simscript)
    cols  = 40             # cells per row (default 40)
    rows  = 1              # rows (default 1)
    raw   = true           # raw packet support (default true)
    log   = PATH           # log file (default <name>.log beside the config)
    pipe  = PATH           # command file (default <name>.pipe beside it)

Command file lines: ``key <hex>`` injects a key press, ``packet <hex bytes>``
injects a device-originated raw packet.

Log lines, one per event:

    O <name> <cols> <rows>   device opened
    C                        device closed
    W <cursor> <hex>...      cell image written; cells as U+28xx code points
    K <hex>                  key press injected while open
    P <hex bytes>            raw packet received from the host

Incoming raw packets are echoed back verbatim, except transfer-protocol
packets (magic BXF1): for those the device plays the transfer receiver role
and stores the completed file beside its log as ``<log>.recv``.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path
from typing import Optional

from braillemux import transfer
from braillemux.braille import CellBuffer, cell_to_unicode
from braillemux.drivers import (
    ConfigError,
    Driver,
    DriverClosedError,
    DriverError,
    DriverSpec,
    KeyPressed,
    KeyTranslationTable,
    PacketReceived,
    ROUTING_BASE,
    default_key_table,
)

_POLL_INTERVAL = 0.005

_DEFAULTS = {"name": "simscript", "cols": "40", "rows": "1", "raw": "true"}


def _parse_config(path) -> dict[str, str]:
    values = dict(_DEFAULTS)
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
        if key not in ("name", "cols", "rows", "raw", "log", "pipe"):
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = value
    return values


class SimScriptDriver(Driver):
    def __init__(
        self,
        name: str = "simscript",
        cols: int = 40,
        rows: int = 1,
        raw: bool = True,
        log_path=None,
        pipe_path=None,
        base_dir=None,
    ):
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        self._log_path = Path(log_path) if log_path else base / f"{name}.log"
        self._pipe_path = Path(pipe_path) if pipe_path else base / f"{name}.pipe"
        keycodes = frozenset(range(0x01, 0x08)) | frozenset(
            range(ROUTING_BASE, ROUTING_BASE + cols)
        )
        try:
            self._spec = DriverSpec(name, cols, rows, raw, keycodes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self._key_table = default_key_table(cols)
        self._receiver = transfer.Receiver(self._store_received_file)
        self._log_lock = threading.Lock()
        self._log_file = None
        self._open = False
        self._stop = threading.Event()
        self._tail_thread: Optional[threading.Thread] = None

    @classmethod
    def from_config(cls, path=None) -> "SimScriptDriver":
        if path is None:
            return cls()
        values = _parse_config(path)
        try:
            cols = int(values["cols"])
            rows = int(values["rows"])
        except ValueError as exc:
            raise ConfigError(f"cols/rows must be integers: {exc}") from exc
        raw_flag = values["raw"].lower()
        if raw_flag not in ("true", "false"):
            raise ConfigError(f"raw must be true or false, got {values['raw']!r}")
        return cls(
            name=values["name"],
            cols=cols,
            rows=rows,
            raw=raw_flag == "true",
            log_path=values.get("log"),
            pipe_path=values.get("pipe"),
            base_dir=Path(path).resolve().parent,
        )

    @property
    def spec(self) -> DriverSpec:
        return self._spec

    @property
    def key_table(self) -> KeyTranslationTable:
        return self._key_table

    @property
    def is_open(self) -> bool:
        return self._open

    @property
    def log_path(self) -> Path:
        return self._log_path

    @property
    def pipe_path(self) -> Path:
        return self._pipe_path

    @property
    def received_path(self) -> Path:
        return self._log_path.with_name(self._log_path.name + ".recv")

    def open(self) -> None:
        if self._open:
            raise DriverError("device already open")
        if self._log_file is None:
            # First open of this instance starts a fresh log; reopens
            # (after a suspend) append to it.
            self._log_file = open(self._log_path, "w", encoding="utf-8", buffering=1)
            self._pipe_path.touch(exist_ok=True)
            self._tail_thread = threading.Thread(
                target=self._tail_pipe, name="simscript-pipe", daemon=True
            )
            self._tail_thread.start()
        self._open = True
        spec = self._spec
        self._log(f"O {spec.name} {spec.cols} {spec.rows}")

    def close(self) -> None:
        if not self._open:
            return
        self._open = False
        self._log("C")

    def shutdown(self) -> None:
        self.close()
        self._stop.set()
        if self._tail_thread is not None:
            self._tail_thread.join(timeout=2)
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def write_cells(self, buffer: CellBuffer) -> None:
        if not self._open:
            raise DriverClosedError("write_cells on closed device")
        spec = self._spec
        if (buffer.cols, buffer.rows) != (spec.cols, spec.rows):
            raise DriverError(
                f"buffer is {buffer.cols}x{buffer.rows}, device is "
                f"{spec.cols}x{spec.rows}"
            )
        cells = " ".join(f"{cell_to_unicode(c):04x}" for c in buffer.cells)
        self._log(f"W {buffer.cursor or 0} {cells}")

    def send_packet(self, data: bytes) -> None:
        if not self._spec.supports_raw:
            raise DriverError("device has no raw packet support")
        if not self._open:
            raise DriverClosedError("send_packet on closed device")
        self._log("P " + " ".join(f"{b:02x}" for b in data))
        try:
            packet = transfer.decode(data)
        except transfer.TransferError:
            return  # malformed transfer traffic is dropped
        if packet is None:
            self._emit(PacketReceived(bytes(data)))
            return
        reply = self._receiver.on_packet(packet)
        if reply is not None:
            self._emit(PacketReceived(transfer.encode(reply)))

    def _store_received_file(self, data: bytes) -> None:
        self.received_path.write_bytes(data)

    def _log(self, line: str) -> None:
        with self._log_lock:
            if self._log_file is not None:
                self._log_file.write(line + "\n")

    def _tail_pipe(self) -> None:
        with open(self._pipe_path, "r", encoding="utf-8") as fh:
            pending = ""
            while not self._stop.is_set():
                chunk = fh.readline()
                if not chunk:
                    time.sleep(_POLL_INTERVAL)
                    continue
                pending += chunk
                if not pending.endswith("\n"):
                    continue  # writer mid-line; wait for the rest
                line, pending = pending.strip(), ""
                if line:
                    self._handle_command(line)

    def _handle_command(self, line: str) -> None:
        parts = line.split()
        try:
            if parts[0] == "key" and len(parts) == 2:
                code = int(parts[1], 16)
            elif parts[0] == "packet" and len(parts) >= 1:
                data = bytes(int(tok, 16) for tok in parts[1:])
            else:
                return
        except ValueError:
            return  # malformed injection lines are ignored
        if not self._open:
            return  # a closed device emits nothing
        if parts[0] == "key":
            self._log(f"K 0x{code:x}")
            self._emit(KeyPressed(code))
        else:
            self._emit(PacketReceived(data))
