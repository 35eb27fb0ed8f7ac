"""Raw-mode file transfer against a device that speaks the transfer protocol.

Takes the device exclusively, performs the Hello handshake, streams the file
as stop-and-wait Data/AckSeq rounds, then exchanges Done packets carrying
each side's CRC-32 of the whole file.

Exit codes: 0 transferred and CRCs match, 3 device busy, 4 CRC mismatch,
1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Type

from braillemux import client, transfer
from braillemux.proto import ErrorCode
from braillemux.tools.common import add_connection_args, connect

_REPLY_TIMEOUT = 5.0


def _await_reply(
    conn: client.Connection, want: Type[transfer.TransferPacket]
) -> Optional[transfer.TransferPacket]:
    """Next transfer packet of the wanted type; skips unrelated traffic."""
    while True:
        data = conn.recv_raw(timeout=_REPLY_TIMEOUT)
        if data is None:
            return None
        try:
            packet = transfer.decode(data)
        except transfer.TransferError:
            continue
        if isinstance(packet, want):
            return packet


def _send_file(conn: client.Connection, payload: bytes) -> int:
    conn.send_raw(transfer.encode(transfer.Hello()))
    if _await_reply(conn, transfer.Hello) is None:
        print("bxfer: device did not answer the transfer hello", file=sys.stderr)
        return 1
    for seq in range(0, (len(payload) + transfer.CHUNK_SIZE - 1) // transfer.CHUNK_SIZE):
        chunk = payload[seq * transfer.CHUNK_SIZE : (seq + 1) * transfer.CHUNK_SIZE]
        conn.send_raw(transfer.encode(transfer.Data(seq, chunk)))
        ack = _await_reply(conn, transfer.AckSeq)
        if ack is None or ack.seq != seq:
            print(f"bxfer: no acknowledgement for chunk {seq}", file=sys.stderr)
            return 1
    crc = transfer.file_crc(payload)
    conn.send_raw(transfer.encode(transfer.Done(crc)))
    done = _await_reply(conn, transfer.Done)
    if done is None:
        print("bxfer: device never confirmed completion", file=sys.stderr)
        return 1
    if done.crc32 != crc:
        print(
            f"bxfer: checksum mismatch (sent {crc:08x}, device saw {done.crc32:08x})",
            file=sys.stderr,
        )
        return 4
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bxfer", description="transfer a file to the braille device"
    )
    add_connection_args(parser)
    parser.add_argument("mode", choices=("send",))
    parser.add_argument("file", help="file to send")
    args = parser.parse_args(argv)

    try:
        payload = open(args.file, "rb").read()
    except OSError as exc:
        print(f"bxfer: {exc}", file=sys.stderr)
        return 1

    try:
        conn = connect(args)
    except client.ClientError as exc:
        print(f"bxfer: {exc}", file=sys.stderr)
        return 1
    try:
        driver_name = conn.get_driver_name()
        try:
            conn.enter_raw_mode(driver_name)
        except client.RequestError as exc:
            if exc.code == ErrorCode.DEVICE_BUSY:
                print("bxfer: device is busy", file=sys.stderr)
                return 3
            raise
        status = _send_file(conn, payload)
        conn.leave_raw_mode()
        return status
    except client.ClientError as exc:
        print(f"bxfer: {exc}", file=sys.stderr)
        return 1
    finally:
        conn.close()


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
