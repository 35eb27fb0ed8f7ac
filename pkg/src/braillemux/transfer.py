"""File-transfer mini-protocol carried inside raw device packets.

Every transfer packet starts with the magic ``BXF1`` so the simulated
device can tell them apart from arbitrary raw traffic (which it echoes).
Layout after the magic: u8 opcode, then per-opcode fields, big-endian.

    Hello   0x01  (no fields; sent both ways to start a transfer)
    Data    0x02  u32 seq + u16 len + bytes (≤1024)
    AckSeq  0x03  u32 seq
    Done    0x04  u32 crc32 of the whole file

Stop-and-wait: the sender emits Data packets with seq 0,1,2,... and waits
for the matching AckSeq before the next one.  Done carries the sender's
CRC-32 (the standard reflected polynomial, as computed by zlib.crc32); the
receiver answers with its own Done so both ends can compare.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Optional, Union

MAGIC = b"BXF1"
CHUNK_SIZE = 1024

_OP_HELLO = 0x01
_OP_DATA = 0x02
_OP_ACK = 0x03
_OP_DONE = 0x04

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")


class TransferError(ValueError):
    """Bytes carry the transfer magic but are not a valid transfer packet."""


@dataclass(frozen=True)
class Hello:
    pass


@dataclass(frozen=True)
class Data:
    seq: int
    chunk: bytes

    def __post_init__(self):
        object.__setattr__(self, "chunk", bytes(self.chunk))


@dataclass(frozen=True)
class AckSeq:
    seq: int


@dataclass(frozen=True)
class Done:
    crc32: int


TransferPacket = Union[Hello, Data, AckSeq, Done]


def file_crc(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def encode(packet: TransferPacket) -> bytes:
    if isinstance(packet, Hello):
        return MAGIC + bytes([_OP_HELLO])
    if isinstance(packet, Data):
        if len(packet.chunk) > CHUNK_SIZE:
            raise TransferError(f"chunk exceeds {CHUNK_SIZE} bytes")
        return (
            MAGIC
            + bytes([_OP_DATA])
            + _U32.pack(packet.seq)
            + _U16.pack(len(packet.chunk))
            + packet.chunk
        )
    if isinstance(packet, AckSeq):
        return MAGIC + bytes([_OP_ACK]) + _U32.pack(packet.seq)
    if isinstance(packet, Done):
        return MAGIC + bytes([_OP_DONE]) + _U32.pack(packet.crc32)
    raise TypeError(f"not a transfer packet: {packet!r}")


def decode(data: bytes) -> Optional[TransferPacket]:
    """Decode a raw packet, or return None when it is not transfer traffic."""
    if not data.startswith(MAGIC):
        return None
    if len(data) < 5:
        raise TransferError("truncated transfer packet")
    op, body = data[4], data[5:]
    if op == _OP_HELLO:
        if body:
            raise TransferError("unexpected bytes after Hello")
        return Hello()
    if op == _OP_DATA:
        if len(body) < 6:
            raise TransferError("truncated Data packet")
        seq = _U32.unpack(body[:4])[0]
        n = _U16.unpack(body[4:6])[0]
        if n > CHUNK_SIZE or len(body) != 6 + n:
            raise TransferError("Data length mismatch")
        return Data(seq, body[6:])
    if op == _OP_ACK:
        if len(body) != 4:
            raise TransferError("AckSeq length mismatch")
        return AckSeq(_U32.unpack(body)[0])
    if op == _OP_DONE:
        if len(body) != 4:
            raise TransferError("Done length mismatch")
        return Done(_U32.unpack(body)[0])
    raise TransferError(f"unknown transfer opcode {op:#x}")


class Receiver:
    """Receiver side of the transfer protocol, as the device implements it.

    Feed it decoded transfer packets; it returns the reply to send back (or
    None).  When the sender's Done arrives, the assembled bytes are handed
    to ``sink`` and the reply carries the receiver's own CRC.
    """

    def __init__(self, sink: Callable[[bytes], None]):
        self._sink = sink
        self._chunks: list[bytes] = []
        self._next_seq = 0

    def on_packet(self, packet: TransferPacket) -> Optional[TransferPacket]:
        if isinstance(packet, Hello):
            self._chunks = []
            self._next_seq = 0
            return Hello()
        if isinstance(packet, Data):
            if packet.seq == self._next_seq:
                self._chunks.append(packet.chunk)
                self._next_seq += 1
            # Out-of-sequence data is acked but dropped; over an in-order
            # channel it can only be a sender bug.
            return AckSeq(packet.seq)
        if isinstance(packet, Done):
            data = b"".join(self._chunks)
            self._sink(data)
            return Done(file_crc(data))
        return None
