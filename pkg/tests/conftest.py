"""Shared fixtures: random packet generation, fake endpoints, live daemons."""

from __future__ import annotations

import random
import subprocess
import sys
import time
from pathlib import Path
from typing import Callable, List, Optional

import pytest

from braillemux import proto
from braillemux.drivers import (
    Driver,
    DriverClosedError,
    DriverError,
    DriverSpec,
    KeyTranslationTable,
    default_key_table,
)


# ---------------------------------------------------------------------------
# Random packet generation (shared by round-trip and fuzz suites)

def random_path(rng: random.Random, min_depth: int = 0):
    return tuple(
        rng.randrange(2**32) for _ in range(rng.randint(min_depth, proto.MAX_PATH_DEPTH))
    )


def random_text(rng: random.Random, limit: int = 64) -> str:
    alphabet = "abc é \U0001F600xyz0189"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, limit)))


def random_packet(rng: random.Random) -> proto.Packet:
    """One random well-formed packet, covering every wire type."""
    choice = rng.randrange(22)
    u32 = lambda: rng.randrange(2**32)
    u64 = lambda: rng.randrange(2**64)
    blob = lambda cap: bytes(rng.randrange(256) for _ in range(rng.randint(0, cap)))
    if choice == 0:
        return proto.Version(u32())
    if choice == 1:
        return proto.VersionAck(u32())
    if choice == 2:
        mechs = [int(m) for m in proto.Mechanism]
        return proto.AuthOffer(tuple(rng.choice(mechs) for _ in range(rng.randint(0, 4))))
    if choice == 3:
        return proto.AuthReq(int(rng.choice(list(proto.Mechanism))), blob(64))
    if choice == 4:
        return proto.AuthOk()
    if choice == 5:
        return proto.Ack(u32())
    if choice == 6:
        return proto.GetDriverName()
    if choice == 7:
        return proto.DriverName(random_text(rng, 12))
    if choice == 8:
        return proto.GetDisplaySize()
    if choice == 9:
        return proto.DisplaySize(u32(), u32())
    if choice == 10:
        return proto.EnterTty(random_path(rng), rng.choice((0, 1)))
    if choice == 11:
        return proto.LeaveTty()
    if choice == 12:
        return proto.WriteText(u32(), random_text(rng))
    if choice == 13:
        return proto.WriteDots(blob(96))
    if choice == 14:
        return proto.KeyEvent(rng.choice((0, 1)), u64(), u32())
    if choice == 15:
        return proto.EnterRaw(random_text(rng, 12))
    if choice == 16:
        return proto.LeaveRaw()
    if choice == 17:
        return proto.RawPacket(blob(96))
    if choice == 18:
        return proto.Suspend(random_text(rng, 12))
    if choice == 19:
        return proto.Resume()
    if choice == 20:
        return proto.SetFocus(random_path(rng), u32())
    return proto.Error(u32(), u32())


# ---------------------------------------------------------------------------
# Focus arbitration oracle: restate the rules as a direct brute-force walk

def brute_force_winner(bindings, focus_map):
    """Longest-eligible-prefix rule, spelled out step by step."""
    active = []
    while len(active) < proto.MAX_PATH_DEPTH and tuple(active) in focus_map:
        active.append(focus_map[tuple(active)])
    active = tuple(active)
    eligible = [b for b in bindings if active[: len(b.path)] == tuple(b.path)]
    if not eligible:
        return None
    best = eligible[0]
    for b in eligible[1:]:
        if (len(b.path), b.entry_seq) > (len(best.path), best.entry_seq):
            best = b
    return best.client_id


# ---------------------------------------------------------------------------
# Fakes for driving the server core synchronously

class FakeTransport:
    """Collects packets the server sends; no threads, no sockets."""

    def __init__(self):
        self.sent: List[proto.Packet] = []
        self.closed = False
        self.accept_keys = True

    def send(self, packet) -> None:
        self.sent.append(packet)

    def can_accept(self) -> bool:
        return self.accept_keys and not self.closed

    def close(self) -> None:
        self.closed = True

    def of_type(self, cls) -> List[proto.Packet]:
        return [p for p in self.sent if isinstance(p, cls)]


class RecordingDriver(Driver):
    """In-memory driver that records every call for assertions."""

    def __init__(self, cols: int = 8, rows: int = 1, supports_raw: bool = True):
        self._spec = DriverSpec("recdrv", cols, rows, supports_raw)
        self._key_table = default_key_table(cols)
        self._open = False
        self.ops: List[tuple] = []

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
            raise DriverError("already open")
        self._open = True
        self.ops.append(("open",))

    def close(self) -> None:
        if self._open:
            self._open = False
            self.ops.append(("close",))

    def write_cells(self, buffer) -> None:
        if not self._open:
            raise DriverClosedError("closed")
        self.ops.append(("write", bytes(buffer.cells), buffer.cursor))

    def send_packet(self, data: bytes) -> None:
        if not self._spec.supports_raw:
            raise DriverError("no raw support")
        if not self._open:
            raise DriverClosedError("closed")
        self.ops.append(("packet", bytes(data)))

    def writes(self) -> List[bytes]:
        return [op[1] for op in self.ops if op[0] == "write"]


# ---------------------------------------------------------------------------
# Live daemon on a simscript device

def wait_until(predicate: Callable[[], bool], timeout: float = 5.0, step=0.01) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(step)
    return predicate()


class LiveServer:
    """brld subprocess on an OS-assigned port with a simscript device."""

    def __init__(self, tmp: Path, cols: int = 8, rows: int = 1, auth: str = "none"):
        self.dir = tmp
        self.config = tmp / "device.cfg"
        self.config.write_text(f"cols = {cols}\nrows = {rows}\n")
        self.log_path = tmp / "simscript.log"
        self.pipe_path = tmp / "simscript.pipe"
        self.recv_path = tmp / "simscript.log.recv"
        self.proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "braillemux.server",
                "--driver",
                "simscript",
                "--driver-config",
                str(self.config),
                "--listen",
                "tcp:127.0.0.1:0",
                "--auth",
                auth,
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        line = self.proc.stdout.readline().strip()
        assert line.startswith("listening on "), line
        self.address = line.split()[-1]

    def inject_key(self, code: int) -> None:
        with open(self.pipe_path, "a", encoding="utf-8") as fh:
            fh.write(f"key 0x{code:x}\n")

    def inject_packet(self, data: bytes) -> None:
        with open(self.pipe_path, "a", encoding="utf-8") as fh:
            fh.write("packet " + " ".join(f"{b:02x}" for b in data) + "\n")

    def log_lines(self) -> List[str]:
        if not self.log_path.exists():
            return []
        return self.log_path.read_text(encoding="utf-8").splitlines()

    def wait_for_log(self, predicate, timeout: float = 5.0) -> List[str]:
        wait_until(lambda: predicate(self.log_lines()), timeout)
        return self.log_lines()

    def stop(self) -> Optional[int]:
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self.proc.stdout.close()
        self.proc.stderr.close()
        return self.proc.returncode


@pytest.fixture
def live_server(tmp_path):
    server = LiveServer(tmp_path)
    yield server
    server.stop()


@pytest.fixture
def live_server_factory(tmp_path):
    servers: List[LiveServer] = []

    def factory(name: str = "srv", **kwargs) -> LiveServer:
        sub = tmp_path / name
        sub.mkdir(exist_ok=True)
        server = LiveServer(sub, **kwargs)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.stop()
