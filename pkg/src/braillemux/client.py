"""Client library for the braille multiplexing daemon.

Typical lifecycle::

    import braillemux.client as brl

    with brl.open_connection() as conn:
        conn.enter_tty_mode([2])
        conn.write_text("Press any key")
        event = conn.read_key(timeout=5.0)
        conn.leave_tty_mode()

The server address comes from the ``address`` argument, else the
``BRLMUX_ADDR`` environment variable, else ``tcp:127.0.0.1:4101``; an auth
key comes from ``auth_key``, else the file named by ``BRLMUX_KEYFILE``.

Writes (``write_text``, ``write_dots``, ``send_raw``) return as soon as the
packet is handed to the transport; the server never acknowledges them.  Any
asynchronous error they provoke is delivered later through ``next_error``.
Key events, raw packets, and those errors are demultiplexed off the wire by
a background reader into separate queues, so a blocked ``read_key`` never
steals another call's reply.

A handle may be shared between threads: requests are serialized internally.
"""

from __future__ import annotations

import os
import queue
import socket
import threading
from typing import Iterable, Optional, Sequence, Tuple, Union

from braillemux import proto
from braillemux.netaddr import DEFAULT_ADDRESS, Address, parse_address

ENV_ADDR = "BRLMUX_ADDR"
ENV_KEYFILE = "BRLMUX_KEYFILE"

_REPLY_TIMEOUT = 10.0
_LOST = object()  # queue sentinel: the connection died


class ClientError(Exception):
    """Base class for everything this module raises."""


class ConnectFailed(ClientError):
    pass


class AuthFailed(ClientError):
    pass


class VersionMismatch(ClientError):
    pass


class ConnectionLost(ClientError):
    pass


class NotInTty(ClientError):
    pass


class NotInRaw(ClientError):
    pass


class RequestError(ClientError):
    """The server answered a request with an error packet."""

    def __init__(self, code: int, offending_type: int):
        try:
            self.code = proto.ErrorCode(code)
        except ValueError:
            self.code = code
        self.offending_type = offending_type
        super().__init__(
            f"{getattr(self.code, 'name', self.code)} "
            f"(request {proto.packet_name(offending_type)})"
        )


_AUTHED = "authed"
_TTY = "tty"
_RAW = "raw"
_SUSPEND = "suspend"


class Connection:
    """One authenticated connection to the daemon."""

    def __init__(
        self,
        sock: socket.socket,
        decoder: proto.FrameDecoder,
        initial_packets: Sequence[proto.Packet] = (),
    ):
        self._sock = sock
        self._mode = _AUTHED
        self._prior_mode = _AUTHED
        self._lock = threading.RLock()
        self._closed = False
        self._lost = False
        self._replies: queue.Queue = queue.Queue()
        self._keys: queue.Queue = queue.Queue()
        self._raw: queue.Queue = queue.Queue()
        self._errors: queue.Queue = queue.Queue()
        self._reader = threading.Thread(
            target=self._read_loop,
            args=(decoder, list(initial_packets)),
            name="brl-reader",
            daemon=True,
        )
        self._reader.start()

    # ------------------------------------------------------------------
    # tty mode

    def enter_tty_mode(
        self, path: Iterable[int], key_mode: int = proto.KEY_COMMANDS
    ) -> None:
        """Bind this connection to a focus path and start receiving keys."""
        self._request(proto.EnterTty(tuple(path), key_mode))
        with self._lock:
            self._mode = _TTY

    def leave_tty_mode(self) -> None:
        if self._mode != _TTY:
            raise NotInTty("not in tty mode")
        self._request(proto.LeaveTty())
        with self._lock:
            self._mode = _AUTHED

    def write_text(self, text: str, cursor: int = 0) -> None:
        """Queue a text write; returns before the server processes it."""
        if self._mode != _TTY:
            raise NotInTty("write_text outside tty mode")
        self._send(proto.WriteText(cursor, text))

    def write_dots(self, cells: Union[bytes, Sequence[int]]) -> None:
        if self._mode != _TTY:
            raise NotInTty("write_dots outside tty mode")
        self._send(proto.WriteDots(bytes(cells)))

    def read_key(self, timeout: Optional[float] = None) -> Optional[proto.KeyEvent]:
        """Oldest pending key event, or None if the timeout expires."""
        if self._mode != _TTY:
            raise NotInTty("read_key outside tty mode")
        return self._get(self._keys, timeout)

    # ------------------------------------------------------------------
    # exclusive modes

    def enter_raw_mode(self, driver_name: str) -> None:
        self._request(proto.EnterRaw(driver_name))
        with self._lock:
            self._prior_mode = self._mode
            self._mode = _RAW

    def leave_raw_mode(self) -> None:
        if self._mode != _RAW:
            raise NotInRaw("not in raw mode")
        self._request(proto.LeaveRaw())
        with self._lock:
            self._mode = self._prior_mode

    def send_raw(self, data: bytes) -> None:
        if self._mode != _RAW:
            raise NotInRaw("send_raw outside raw mode")
        self._send(proto.RawPacket(bytes(data)))

    def recv_raw(self, timeout: Optional[float] = None) -> Optional[bytes]:
        if self._mode != _RAW:
            raise NotInRaw("recv_raw outside raw mode")
        packet = self._get(self._raw, timeout)
        return None if packet is None else packet.data

    def suspend_driver(self, driver_name: str) -> None:
        self._request(proto.Suspend(driver_name))
        with self._lock:
            self._prior_mode = self._mode
            self._mode = _SUSPEND

    def resume_driver(self) -> None:
        self._request(proto.Resume())
        with self._lock:
            self._mode = self._prior_mode

    # ------------------------------------------------------------------
    # queries and focus

    def get_driver_name(self) -> str:
        reply = self._request(proto.GetDriverName(), expect=proto.DriverName)
        return reply.name

    def get_display_size(self) -> Tuple[int, int]:
        reply = self._request(proto.GetDisplaySize(), expect=proto.DisplaySize)
        return (reply.cols, reply.rows)

    def set_focus(self, prefix: Iterable[int], active_child: int) -> None:
        """Report the active child at a focus-tree node (focus agent role)."""
        self._request(proto.SetFocus(tuple(prefix), active_child))

    def next_error(self, timeout: Optional[float] = None) -> Optional[RequestError]:
        """Oldest asynchronous write error, or None if none arrives in time."""
        return self._get(self._errors, timeout)

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(timeout=2)

    def __enter__(self) -> "Connection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ------------------------------------------------------------------
    # plumbing

    def _send(self, packet) -> None:
        data = proto.encode_packet(packet)
        with self._lock:
            if self._closed or self._lost:
                raise ConnectionLost("connection closed")
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc

    def _request(self, packet, expect=proto.Ack):
        with self._lock:
            self._send(packet)
            try:
                reply = self._replies.get(timeout=_REPLY_TIMEOUT)
            except queue.Empty:
                raise ConnectionLost("no reply from server") from None
            if reply is _LOST:
                self._replies.put(_LOST)
                raise ConnectionLost("connection lost")
            if isinstance(reply, proto.Error):
                raise RequestError(reply.error_code, reply.offending_type)
            if not isinstance(reply, expect):
                raise ClientError(f"unexpected reply {reply!r}")
            return reply

    def _get(self, q: queue.Queue, timeout: Optional[float]):
        try:
            item = q.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is _LOST:
            q.put(_LOST)
            raise ConnectionLost("connection lost")
        return item

    def _read_loop(self, decoder: proto.FrameDecoder, packets: list) -> None:
        while True:
            for packet in packets:
                self._route(packet)
            try:
                data = self._sock.recv(65536)
            except OSError:
                break
            if not data:
                break
            try:
                packets = decoder.feed(data)
            except proto.ProtocolError:
                break
        self._mark_lost()

    def _route(self, packet) -> None:
        if isinstance(packet, proto.KeyEvent):
            self._keys.put(packet)
        elif isinstance(packet, proto.RawPacket):
            self._raw.put(packet)
        elif (
            isinstance(packet, proto.Error)
            and packet.offending_type in proto.WRITE_TYPE_CODES
        ):
            self._errors.put(RequestError(packet.error_code, packet.offending_type))
        else:
            self._replies.put(packet)

    def _mark_lost(self) -> None:
        self._lost = True
        for q in (self._replies, self._keys, self._raw, self._errors):
            q.put(_LOST)


def _resolve_address(address) -> Address:
    if address is None:
        address = os.environ.get(ENV_ADDR, DEFAULT_ADDRESS)
    if isinstance(address, str):
        return parse_address(address)
    return address


def _resolve_key(auth_key: Optional[bytes]) -> Optional[bytes]:
    if auth_key is not None:
        return auth_key
    path = os.environ.get(ENV_KEYFILE)
    if not path:
        return None
    try:
        return open(path, "rb").read()
    except OSError as exc:
        raise AuthFailed(f"cannot read key file {path}: {exc}") from exc


def open_connection(
    address=None,
    auth_key: Optional[bytes] = None,
    timeout: float = 10.0,
) -> Connection:
    """Connect, negotiate the protocol version, and authenticate."""
    addr = _resolve_address(address)
    key = _resolve_key(auth_key)
    try:
        sock = addr.connect(timeout=timeout)
    except OSError as exc:
        raise ConnectFailed(f"cannot connect to {addr}: {exc}") from exc
    try:
        return _handshake(sock, key)
    except Exception:
        sock.close()
        raise


def _handshake(sock: socket.socket, key: Optional[bytes]) -> Connection:
    decoder = proto.FrameDecoder()
    pending: list = []

    def next_packet():
        while not pending:
            try:
                data = sock.recv(65536)
            except OSError as exc:
                raise ConnectFailed(f"handshake read failed: {exc}") from exc
            if not data:
                raise ConnectFailed("server closed the connection during handshake")
            pending.extend(decoder.feed(data))
        return pending.pop(0)

    version = next_packet()
    if not isinstance(version, proto.Version):
        raise ConnectFailed(f"expected version announcement, got {version!r}")
    if version.version != proto.PROTOCOL_VERSION:
        raise VersionMismatch(f"server speaks version {version.version}")
    sock.sendall(proto.encode_packet(proto.VersionAck(proto.PROTOCOL_VERSION)))

    offer = next_packet()
    if not isinstance(offer, proto.AuthOffer):
        raise ConnectFailed(f"expected mechanism offer, got {offer!r}")
    if proto.Mechanism.NONE in offer.mechanisms:
        request = proto.AuthReq(int(proto.Mechanism.NONE), b"")
    elif proto.Mechanism.KEYFILE in offer.mechanisms:
        if key is None:
            raise AuthFailed("server requires a key and none was provided")
        request = proto.AuthReq(int(proto.Mechanism.KEYFILE), key)
    else:
        raise AuthFailed(f"no supported mechanism among {offer.mechanisms}")

    last_error: Optional[proto.Error] = None
    for _attempt in range(3):
        sock.sendall(proto.encode_packet(request))
        try:
            reply = next_packet()
        except ConnectFailed:
            break  # server hung up after repeated failures
        if isinstance(reply, proto.AuthOk):
            return Connection(sock, decoder, pending)
        if isinstance(reply, proto.Error):
            if reply.error_code == proto.ErrorCode.UNSUPPORTED_VERSION:
                raise VersionMismatch("server rejected protocol version 1")
            last_error = reply
            continue
        raise ConnectFailed(f"unexpected handshake reply {reply!r}")
    code = last_error.error_code if last_error else proto.ErrorCode.UNAUTHORIZED
    raise AuthFailed(f"authorization failed ({proto.ErrorCode(code).name})")
