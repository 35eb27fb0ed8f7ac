"""Driver abstraction over one braille device, plus the simulated drivers.

A driver owns exactly one device: it can push a cell image to the display,
reports key presses as opaque u64 codes, and (when the device protocol is
packet-oriented) tunnels raw packets in both directions.  Device keycodes
are translated to a device-independent command set by a per-driver key
table, so portable clients never see hardware codes.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, FrozenSet, Mapping, Optional, Union

from braillemux.braille import CellBuffer

ROUTING_BASE = 0x100


class DriverError(Exception):
    """Base class for driver failures."""


class ConfigError(DriverError):
    """Driver configuration file is missing or malformed."""


class DriverClosedError(DriverError):
    """Operation attempted while the driver is closed."""


class NotATtyError(DriverError):
    """The terminal emulator driver needs an interactive terminal."""


class Command(IntEnum):
    """Device-independent commands carried in key events."""

    LINE_UP = 1
    LINE_DOWN = 2
    PAN_LEFT = 3
    PAN_RIGHT = 4
    HOME = 5
    TOP = 6
    BOTTOM = 7
    ROUTE = 8  # arg = 0-based cell index


@dataclass(frozen=True)
class KeyCommand:
    command: Command
    arg: int = 0


@dataclass(frozen=True)
class KeyTranslationTable:
    """Maps device keycodes to commands.

    Codes in ``[routing_base, routing_base + routing_count)`` translate to
    ROUTE with the offset as argument; that range must not overlap the
    explicit mapping.
    """

    mapping: Mapping[int, Command]
    routing_base: Optional[int] = None
    routing_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mapping", dict(self.mapping))
        if self.routing_base is not None:
            span = range(self.routing_base, self.routing_base + self.routing_count)
            if any(code in self.mapping for code in span):
                raise ValueError("routing range overlaps explicit key mapping")

    def translate(self, code: int) -> Optional[KeyCommand]:
        """Translate one keycode; None means the device key is unmapped."""
        command = self.mapping.get(code)
        if command is not None:
            return KeyCommand(command)
        if (
            self.routing_base is not None
            and self.routing_base <= code < self.routing_base + self.routing_count
        ):
            return KeyCommand(Command.ROUTE, code - self.routing_base)
        return None


def default_key_table(cols: int) -> KeyTranslationTable:
    """The key table both simulated drivers ship with."""
    return KeyTranslationTable(
        {
            0x01: Command.LINE_UP,
            0x02: Command.LINE_DOWN,
            0x03: Command.PAN_LEFT,
            0x04: Command.PAN_RIGHT,
            0x05: Command.HOME,
            0x06: Command.TOP,
            0x07: Command.BOTTOM,
        },
        routing_base=ROUTING_BASE,
        routing_count=cols,
    )


@dataclass(frozen=True)
class DriverSpec:
    name: str
    cols: int
    rows: int
    supports_raw: bool
    keycodes: FrozenSet[int] = frozenset()

    def __post_init__(self):
        if len(self.name.encode("utf-8")) > 64:
            raise ValueError("driver name exceeds 64 bytes")
        if self.cols < 1 or self.rows < 1:
            raise ValueError("display must be at least 1x1")
        if self.cols * self.rows > 16384:
            raise ValueError("display exceeds 16384 cells")


@dataclass(frozen=True)
class KeyPressed:
    code: int


@dataclass(frozen=True)
class PacketReceived:
    data: bytes


DriverEvent = Union[KeyPressed, PacketReceived]


class Driver(ABC):
    """Contract every device driver implements.

    write_cells and send_packet are only legal between open and close; a
    closed driver emits no events.  ``on_event`` is installed by the owner
    before open and may be called from driver-internal threads.
    """

    on_event: Optional[Callable[[DriverEvent], None]] = None

    @property
    @abstractmethod
    def spec(self) -> DriverSpec: ...

    @property
    @abstractmethod
    def key_table(self) -> KeyTranslationTable: ...

    @property
    @abstractmethod
    def is_open(self) -> bool: ...

    @abstractmethod
    def open(self) -> None: ...

    @abstractmethod
    def close(self) -> None: ...

    @abstractmethod
    def write_cells(self, buffer: CellBuffer) -> None: ...

    def send_packet(self, data: bytes) -> None:
        raise DriverError(f"{self.spec.name} has no raw packet support")

    def shutdown(self) -> None:
        """Final teardown: close and stop any internal threads."""
        if self.is_open:
            self.close()

    def _emit(self, event: DriverEvent) -> None:
        sink = self.on_event
        if sink is not None:
            sink(event)


def create_driver(kind: str, config_path=None) -> Driver:
    """Instantiate a driver by CLI name."""
    if kind == "simscript":
        from braillemux.drivers.simscript import SimScriptDriver

        return SimScriptDriver.from_config(config_path)
    if kind == "simterm":
        from braillemux.drivers.simterm import SimTermDriver

        if config_path is not None:
            raise ConfigError("simterm takes no config file")
        return SimTermDriver()
    raise ConfigError(f"unknown driver {kind!r}")
