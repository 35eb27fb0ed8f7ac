"""Wire protocol: every message exchanged between server and clients.

Frame format (all integers big-endian):

    ┌────────────┬──────────────┬─────────────────┐
    │ length u32 │ typeCode u32 │ payload (bytes) │
    └────────────┴──────────────┴─────────────────┘

``length`` counts payload bytes only and never exceeds ``MAX_FRAME_PAYLOAD``.

Payload layouts per type code:

    0x01 Version        u32 version
    0x02 VersionAck     u32 version
    0x03 AuthOffer      u8 count + count×u32 mechanism id
    0x04 AuthReq        u32 mechanism + u16 len + bytes (≤256)
    0x05 AuthOk         (empty)
    0x06 Ack            u32 ackedType
    0x10 GetDriverName  (empty)
    0x11 DriverName     u16 len + UTF-8 (≤64 bytes)
    0x12 GetDisplaySize (empty)
    0x13 DisplaySize    u32 cols + u32 rows
    0x20 EnterTty       u8 depth + depth×u32 + u8 keyMode
    0x22 LeaveTty       (empty)
    0x23 WriteText      u32 cursor + u16 len + UTF-8 (≤16384 bytes)
    0x24 WriteDots      u32 count + count×u8 (≤16384)
    0x25 KeyEvent       u8 kind + u64 code + u32 arg
    0x30 EnterRaw       u16 len + UTF-8 (≤64 bytes)
    0x31 LeaveRaw       (empty)
    0x32 RawPacket      u16 len + bytes (≤16384)
    0x33 Suspend        u16 len + UTF-8 (≤64 bytes)
    0x34 Resume         (empty)
    0x40 SetFocus       u8 depth + depth×u32 + u32 activeChild
    0x7F Error          u32 errorCode + u32 offendingType

Strings are UTF-8 with a u16 byte-length prefix.  Focus paths are a u8 depth
followed by ``depth`` u32 elements; depth is capped at 8.  Type codes and
error codes are stable: changing one breaks wire compatibility.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import ClassVar, Iterable, Optional, Sequence, Tuple, Union

PROTOCOL_VERSION = 1

MAX_FRAME_PAYLOAD = 65536
MAX_TEXT_BYTES = 16384
MAX_DOT_CELLS = 16384
MAX_RAW_BYTES = 16384
MAX_NAME_BYTES = 64
MAX_AUTH_PAYLOAD = 256
MAX_PATH_DEPTH = 8

HEADER_SIZE = 8
_HEADER = struct.Struct(">II")
_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

KEY_COMMANDS = 0
KEY_RAW = 1


class Mechanism(IntEnum):
    """Authorization mechanism ids offered during the handshake."""

    NONE = 0
    KEYFILE = 1


class ErrorCode(IntEnum):
    INVALID_PACKET = 1
    UNAUTHORIZED = 2
    DEVICE_BUSY = 3
    NOT_IN_MODE = 4
    BAD_PARAMETER = 5
    DRIVER_MISMATCH = 6
    UNSUPPORTED_VERSION = 7
    ILLEGAL_IN_STATE = 8


class EncodingBoundsError(ValueError):
    """A packet field exceeds its wire cap and cannot be encoded."""


class ProtocolError(Exception):
    """Incoming bytes do not form a well-formed frame.

    ``type_code`` is the offending frame's type code when the header could be
    read, else 0.
    """

    def __init__(self, reason: str, type_code: int = 0):
        super().__init__(reason)
        self.reason = reason
        self.type_code = type_code


_PACKET_BY_CODE: dict[int, type] = {}


def _packet(code: int):
    def register(cls):
        cls.type_code = code
        _PACKET_BY_CODE[code] = cls
        return cls

    return register


def _as_path(value: Iterable[int]) -> Tuple[int, ...]:
    return tuple(int(v) for v in value)


def _check_u32(value: int, what: str) -> int:
    if not 0 <= value <= 0xFFFFFFFF:
        raise EncodingBoundsError(f"{what} out of u32 range: {value}")
    return value


def _check_u64(value: int, what: str) -> int:
    if not 0 <= value <= 0xFFFFFFFFFFFFFFFF:
        raise EncodingBoundsError(f"{what} out of u64 range: {value}")
    return value


def _pack_str(text: str, cap: int, what: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > cap:
        raise EncodingBoundsError(f"{what} exceeds {cap} bytes: {len(raw)}")
    return _U16.pack(len(raw)) + raw


def _pack_path(path: Sequence[int], what: str) -> bytes:
    if len(path) > MAX_PATH_DEPTH:
        raise EncodingBoundsError(f"{what} deeper than {MAX_PATH_DEPTH}: {len(path)}")
    out = bytearray(_U8.pack(len(path)))
    for elem in path:
        out += _U32.pack(_check_u32(elem, f"{what} element"))
    return bytes(out)


class _Reader:
    """Bounds-checked cursor over one frame's payload."""

    def __init__(self, payload: memoryview, type_code: int):
        self._mv = payload
        self._pos = 0
        self._code = type_code

    def fail(self, reason: str) -> ProtocolError:
        return ProtocolError(reason, self._code)

    def _take(self, n: int) -> memoryview:
        if self._pos + n > len(self._mv):
            raise self.fail("payload shorter than its layout requires")
        chunk = self._mv[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return _U16.unpack(self._take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return bytes(self._take(n))

    def prefixed_bytes(self, cap: int, what: str) -> bytes:
        n = self.u16()
        if n > cap:
            raise self.fail(f"{what} exceeds {cap} bytes: {n}")
        return self.raw(n)

    def prefixed_str(self, cap: int, what: str) -> str:
        raw = self.prefixed_bytes(cap, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise self.fail(f"{what} is not valid UTF-8") from None

    def path(self, what: str) -> Tuple[int, ...]:
        depth = self.u8()
        if depth > MAX_PATH_DEPTH:
            raise self.fail(f"{what} deeper than {MAX_PATH_DEPTH}: {depth}")
        return tuple(self.u32() for _ in range(depth))

    def finish(self) -> None:
        if self._pos != len(self._mv):
            raise self.fail("trailing bytes after payload")


@dataclass(frozen=True)
class _Packet:
    type_code: ClassVar[int]

    def _payload(self) -> bytes:
        return b""

    @classmethod
    def _parse(cls, r: _Reader) -> "_Packet":
        return cls()


@_packet(0x01)
@dataclass(frozen=True)
class Version(_Packet):
    version: int

    def _payload(self) -> bytes:
        return _U32.pack(_check_u32(self.version, "version"))

    @classmethod
    def _parse(cls, r: _Reader) -> "Version":
        return cls(r.u32())


@_packet(0x02)
@dataclass(frozen=True)
class VersionAck(_Packet):
    version: int

    def _payload(self) -> bytes:
        return _U32.pack(_check_u32(self.version, "version"))

    @classmethod
    def _parse(cls, r: _Reader) -> "VersionAck":
        return cls(r.u32())


@_packet(0x03)
@dataclass(frozen=True)
class AuthOffer(_Packet):
    mechanisms: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", _as_path(self.mechanisms))

    def _payload(self) -> bytes:
        if len(self.mechanisms) > 255:
            raise EncodingBoundsError("too many mechanisms offered")
        out = bytearray(_U8.pack(len(self.mechanisms)))
        for mech in self.mechanisms:
            out += _U32.pack(Mechanism(mech))
        return bytes(out)

    @classmethod
    def _parse(cls, r: _Reader) -> "AuthOffer":
        count = r.u8()
        mechs = []
        for _ in range(count):
            value = r.u32()
            try:
                mechs.append(Mechanism(value))
            except ValueError:
                raise r.fail(f"unknown mechanism id {value}") from None
        return cls(tuple(mechs))


@_packet(0x04)
@dataclass(frozen=True)
class AuthReq(_Packet):
    mechanism: int
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "payload", bytes(self.payload))

    def _payload(self) -> bytes:
        if len(self.payload) > MAX_AUTH_PAYLOAD:
            raise EncodingBoundsError("auth payload exceeds 256 bytes")
        mech = Mechanism(self.mechanism)
        return _U32.pack(mech) + _U16.pack(len(self.payload)) + self.payload

    @classmethod
    def _parse(cls, r: _Reader) -> "AuthReq":
        value = r.u32()
        try:
            mech = Mechanism(value)
        except ValueError:
            raise r.fail(f"unknown mechanism id {value}") from None
        return cls(mech, r.prefixed_bytes(MAX_AUTH_PAYLOAD, "auth payload"))


@_packet(0x05)
@dataclass(frozen=True)
class AuthOk(_Packet):
    pass


@_packet(0x06)
@dataclass(frozen=True)
class Ack(_Packet):
    acked_type: int

    def _payload(self) -> bytes:
        return _U32.pack(_check_u32(self.acked_type, "acked type"))

    @classmethod
    def _parse(cls, r: _Reader) -> "Ack":
        return cls(r.u32())


@_packet(0x10)
@dataclass(frozen=True)
class GetDriverName(_Packet):
    pass


@_packet(0x11)
@dataclass(frozen=True)
class DriverName(_Packet):
    name: str

    def _payload(self) -> bytes:
        return _pack_str(self.name, MAX_NAME_BYTES, "driver name")

    @classmethod
    def _parse(cls, r: _Reader) -> "DriverName":
        return cls(r.prefixed_str(MAX_NAME_BYTES, "driver name"))


@_packet(0x12)
@dataclass(frozen=True)
class GetDisplaySize(_Packet):
    pass


@_packet(0x13)
@dataclass(frozen=True)
class DisplaySize(_Packet):
    cols: int
    rows: int

    def _payload(self) -> bytes:
        return _U32.pack(_check_u32(self.cols, "cols")) + _U32.pack(
            _check_u32(self.rows, "rows")
        )

    @classmethod
    def _parse(cls, r: _Reader) -> "DisplaySize":
        return cls(r.u32(), r.u32())


@_packet(0x20)
@dataclass(frozen=True)
class EnterTty(_Packet):
    path: Tuple[int, ...]
    key_mode: int = KEY_COMMANDS

    def __post_init__(self):
        object.__setattr__(self, "path", _as_path(self.path))

    def _payload(self) -> bytes:
        if self.key_mode not in (KEY_COMMANDS, KEY_RAW):
            raise EncodingBoundsError(f"bad key mode {self.key_mode}")
        return _pack_path(self.path, "tty path") + _U8.pack(self.key_mode)

    @classmethod
    def _parse(cls, r: _Reader) -> "EnterTty":
        path = r.path("tty path")
        mode = r.u8()
        if mode not in (KEY_COMMANDS, KEY_RAW):
            raise r.fail(f"bad key mode {mode}")
        return cls(path, mode)


@_packet(0x22)
@dataclass(frozen=True)
class LeaveTty(_Packet):
    pass


@_packet(0x23)
@dataclass(frozen=True)
class WriteText(_Packet):
    cursor: int  # 0 = no cursor, else 1-based cell index
    text: str

    def _payload(self) -> bytes:
        return _U32.pack(_check_u32(self.cursor, "cursor")) + _pack_str(
            self.text, MAX_TEXT_BYTES, "text"
        )

    @classmethod
    def _parse(cls, r: _Reader) -> "WriteText":
        return cls(r.u32(), r.prefixed_str(MAX_TEXT_BYTES, "text"))


@_packet(0x24)
@dataclass(frozen=True)
class WriteDots(_Packet):
    cells: bytes

    def __post_init__(self):
        object.__setattr__(self, "cells", bytes(self.cells))

    def _payload(self) -> bytes:
        if len(self.cells) > MAX_DOT_CELLS:
            raise EncodingBoundsError("too many dot cells")
        return _U32.pack(len(self.cells)) + self.cells

    @classmethod
    def _parse(cls, r: _Reader) -> "WriteDots":
        count = r.u32()
        if count > MAX_DOT_CELLS:
            raise r.fail(f"dot cell count exceeds {MAX_DOT_CELLS}: {count}")
        return cls(r.raw(count))


@_packet(0x25)
@dataclass(frozen=True)
class KeyEvent(_Packet):
    kind: int  # KEY_COMMANDS or KEY_RAW
    code: int
    arg: int = 0

    def _payload(self) -> bytes:
        if self.kind not in (KEY_COMMANDS, KEY_RAW):
            raise EncodingBoundsError(f"bad key event kind {self.kind}")
        return (
            _U8.pack(self.kind)
            + _U64.pack(_check_u64(self.code, "key code"))
            + _U32.pack(_check_u32(self.arg, "key arg"))
        )

    @classmethod
    def _parse(cls, r: _Reader) -> "KeyEvent":
        kind = r.u8()
        if kind not in (KEY_COMMANDS, KEY_RAW):
            raise r.fail(f"bad key event kind {kind}")
        return cls(kind, r.u64(), r.u32())


@_packet(0x30)
@dataclass(frozen=True)
class EnterRaw(_Packet):
    driver_name: str

    def _payload(self) -> bytes:
        return _pack_str(self.driver_name, MAX_NAME_BYTES, "driver name")

    @classmethod
    def _parse(cls, r: _Reader) -> "EnterRaw":
        return cls(r.prefixed_str(MAX_NAME_BYTES, "driver name"))


@_packet(0x31)
@dataclass(frozen=True)
class LeaveRaw(_Packet):
    pass


@_packet(0x32)
@dataclass(frozen=True)
class RawPacket(_Packet):
    data: bytes

    def __post_init__(self):
        object.__setattr__(self, "data", bytes(self.data))

    def _payload(self) -> bytes:
        if len(self.data) > MAX_RAW_BYTES:
            raise EncodingBoundsError("raw packet exceeds 16384 bytes")
        return _U16.pack(len(self.data)) + self.data

    @classmethod
    def _parse(cls, r: _Reader) -> "RawPacket":
        return cls(r.prefixed_bytes(MAX_RAW_BYTES, "raw packet"))


@_packet(0x33)
@dataclass(frozen=True)
class Suspend(_Packet):
    driver_name: str

    def _payload(self) -> bytes:
        return _pack_str(self.driver_name, MAX_NAME_BYTES, "driver name")

    @classmethod
    def _parse(cls, r: _Reader) -> "Suspend":
        return cls(r.prefixed_str(MAX_NAME_BYTES, "driver name"))


@_packet(0x34)
@dataclass(frozen=True)
class Resume(_Packet):
    pass


@_packet(0x40)
@dataclass(frozen=True)
class SetFocus(_Packet):
    prefix: Tuple[int, ...]
    active_child: int

    def __post_init__(self):
        object.__setattr__(self, "prefix", _as_path(self.prefix))

    def _payload(self) -> bytes:
        return _pack_path(self.prefix, "focus prefix") + _U32.pack(
            _check_u32(self.active_child, "active child")
        )

    @classmethod
    def _parse(cls, r: _Reader) -> "SetFocus":
        return cls(r.path("focus prefix"), r.u32())


@_packet(0x7F)
@dataclass(frozen=True)
class Error(_Packet):
    error_code: int
    offending_type: int

    def _payload(self) -> bytes:
        return _U32.pack(_check_u32(self.error_code, "error code")) + _U32.pack(
            _check_u32(self.offending_type, "offending type")
        )

    @classmethod
    def _parse(cls, r: _Reader) -> "Error":
        return cls(r.u32(), r.u32())


Packet = Union[
    Version,
    VersionAck,
    AuthOffer,
    AuthReq,
    AuthOk,
    Ack,
    GetDriverName,
    DriverName,
    GetDisplaySize,
    DisplaySize,
    EnterTty,
    LeaveTty,
    WriteText,
    WriteDots,
    KeyEvent,
    EnterRaw,
    LeaveRaw,
    RawPacket,
    Suspend,
    Resume,
    SetFocus,
    Error,
]

# Requests whose failures the server reports asynchronously instead of acking.
WRITE_TYPE_CODES = frozenset(
    (WriteText.type_code, WriteDots.type_code, RawPacket.type_code)
)


def encode_packet(packet: Packet) -> bytes:
    """Encode a packet into one complete frame.

    Raises EncodingBoundsError when a field exceeds its wire cap.
    """
    payload = packet._payload()
    if len(payload) > MAX_FRAME_PAYLOAD:
        raise EncodingBoundsError(f"payload exceeds frame cap: {len(payload)}")
    return _HEADER.pack(len(payload), packet.type_code) + payload


def decode_frame(buffer) -> Optional[Tuple[Packet, int]]:
    """Decode the first frame of ``buffer``.

    Returns ``(packet, consumed)`` once a whole frame is buffered, ``None``
    while more bytes are needed, and raises ProtocolError for anything that
    can never become a valid frame (oversized length, unknown type code,
    malformed payload).  Never reads beyond ``buffer``.
    """
    mv = memoryview(buffer)
    if len(mv) < HEADER_SIZE:
        return None
    length, code = _HEADER.unpack(mv[:HEADER_SIZE])
    if length > MAX_FRAME_PAYLOAD:
        raise ProtocolError(f"frame length {length} exceeds cap", code)
    if len(mv) < HEADER_SIZE + length:
        return None
    cls = _PACKET_BY_CODE.get(code)
    if cls is None:
        raise ProtocolError(f"unknown type code {code:#x}", code)
    reader = _Reader(mv[HEADER_SIZE : HEADER_SIZE + length], code)
    packet = cls._parse(reader)
    reader.finish()
    return packet, HEADER_SIZE + length


class FrameDecoder:
    """Incremental decoder for a byte stream of concatenated frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Packet]:
        """Append ``data`` and return every packet that completed."""
        self._buf += data
        packets = []
        while True:
            result = decode_frame(self._buf)
            if result is None:
                return packets
            packet, consumed = result
            del self._buf[:consumed]
            packets.append(packet)

    @property
    def pending(self) -> int:
        return len(self._buf)


def packet_name(type_code: int) -> str:
    """Human-readable name for a type code, for logs and error messages."""
    cls = _PACKET_BY_CODE.get(type_code)
    return cls.__name__ if cls else f"0x{type_code:02x}"
