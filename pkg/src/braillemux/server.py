"""Braille device multiplexing daemon.

One process owns one braille device and shares it among any number of
connected clients:

* every client that enters tty mode gets a retained display buffer;
* a focus map (fed by focus agents via SetFocus) decides which single
  client's buffer is on the physical display at any moment;
* key events from the device go to the focused client only, translated to
  device-independent commands or passed raw per the client's choice;
* one client at a time may take the device away entirely, either tunneling
  raw packets through the server or suspending the server's driver so it
  can open the device itself.

Concurrency: all state lives behind one dispatcher thread consuming a
single event queue (connections, packets, disconnects, device events).
Socket readers/writers run on their own threads and only ever touch the
queue, so every handler here runs serialized.  The ``handle_*`` methods are
the whole state machine; tests may call them directly with fake transports
instead of running the threads.
"""

from __future__ import annotations

import argparse
import logging
import queue
import signal
import socket
import sys
import threading
from collections import deque
from typing import Dict, Optional

from braillemux import proto
from braillemux.braille import (
    BrailleTable,
    BadCursorError,
    CellBuffer,
    default_table,
    load_table,
    render_text,
)
from braillemux.drivers import (
    Command,
    Driver,
    DriverError,
    KeyPressed,
    PacketReceived,
    create_driver,
)
from braillemux.focus import TtyBinding, resolve_focus, set_active
from braillemux.netaddr import DEFAULT_ADDRESS, bound_address, parse_address

log = logging.getLogger("braillemux.server")

KEY_QUEUE_LIMIT = 64
MAX_AUTH_ATTEMPTS = 3
MAX_KEYFILE_BYTES = 64

HANDSHAKE = "handshake"
AUTHED = "authed"
TTY = "tty"
RAW = "raw"
SUSPEND = "suspend"

_SEND_BACKLOG_LIMIT = 32


class Session:
    """Per-connection state; mutated only on the dispatcher thread."""

    def __init__(self, session_id: int, transport):
        self.id = session_id
        self.transport = transport
        self.state = HANDSHAKE
        self.version_ok = False
        self.auth_attempts = 0
        self.binding: Optional[TtyBinding] = None
        self.buffer: Optional[CellBuffer] = None
        self.prior_state = AUTHED  # state to return to after raw/suspend
        self.key_pending: deque = deque()
        self.dropped = 0

    def __repr__(self) -> str:
        return f"<Session {self.id} {self.state}>"


class BrailleMuxServer:
    """The multiplexing core: state machine plus event loop."""

    def __init__(
        self,
        driver: Driver,
        auth_key: Optional[bytes] = None,
        table: Optional[BrailleTable] = None,
    ):
        self.driver = driver
        self.auth_key = auth_key
        self.table = table if table is not None else default_table()
        self.sessions: Dict[int, Session] = {}
        self.focus_map: Dict[tuple, int] = {}
        self.exclusive_owner: Optional[Session] = None
        self._winner_id: Optional[int] = None
        self._next_id = 1
        self._entry_seq = 0
        self._events: queue.Queue = queue.Queue()
        self._dispatcher: Optional[threading.Thread] = None
        self._running = False

    # ------------------------------------------------------------------
    # Threaded operation

    def start(self) -> None:
        self.driver.on_event = lambda ev: self.submit("device", ev)
        self.driver.open()
        self._running = True
        self._dispatcher = threading.Thread(
            target=self._dispatch_loop, name="brld-dispatch", daemon=True
        )
        self._dispatcher.start()

    def stop(self) -> None:
        if not self._running:
            return
        self.submit("stop")
        if self._dispatcher is not None:
            self._dispatcher.join(timeout=5)
        self.driver.shutdown()
        self._running = False

    def submit(self, kind: str, *args) -> None:
        self._events.put((kind, *args))

    def _dispatch_loop(self) -> None:
        while True:
            event = self._events.get()
            kind = event[0]
            if kind == "stop":
                for session in list(self.sessions.values()):
                    session.transport.close()
                return
            try:
                self._dispatch(kind, event[1:])
            except Exception:  # state machine must survive anything
                log.exception("error handling %s event", kind)

    def _dispatch(self, kind: str, args) -> None:
        if kind == "connect":
            (transport,) = args
            session = self.handle_connect(transport)
            start = getattr(transport, "start", None)
            if start is not None:
                start(session)
        elif kind == "packet":
            self.handle_packet(*args)
        elif kind == "protocol_error":
            self.handle_protocol_error(*args)
        elif kind == "disconnect":
            (session,) = args
            self.handle_disconnect(session)
        elif kind == "device":
            (event,) = args
            self.handle_device_event(event)
        elif kind == "drain":
            (session,) = args
            self.handle_drain(session)
        else:
            log.warning("unknown event kind %r", kind)

    # ------------------------------------------------------------------
    # Connection lifecycle

    def handle_connect(self, transport) -> Session:
        session = Session(self._next_id, transport)
        self._next_id += 1
        self.sessions[session.id] = session
        mechanisms = (
            (int(proto.Mechanism.NONE),)
            if self.auth_key is None
            else (int(proto.Mechanism.KEYFILE),)
        )
        transport.send(proto.Version(proto.PROTOCOL_VERSION))
        transport.send(proto.AuthOffer(mechanisms))
        return session

    def handle_disconnect(self, session: Session) -> None:
        if self.sessions.get(session.id) is not session:
            return  # already gone; readers and writers may both report
        del self.sessions[session.id]
        if self.exclusive_owner is session:
            self.exclusive_owner = None
            if session.state == SUSPEND:
                self._reopen_driver()
            self._restore_device()
        else:
            self._refocus()
        session.transport.close()

    def handle_protocol_error(self, session: Session, exc: proto.ProtocolError) -> None:
        self._send_error(session, proto.ErrorCode.INVALID_PACKET, exc.type_code or 0)
        self.handle_disconnect(session)

    def _disconnect(self, session: Session) -> None:
        self.handle_disconnect(session)

    # ------------------------------------------------------------------
    # Packet dispatch

    def handle_packet(self, session: Session, packet: proto.Packet) -> None:
        if self.sessions.get(session.id) is not session:
            return  # packets racing a disconnect
        if session.state == HANDSHAKE:
            self._handshake_packet(session, packet)
        else:
            self._session_packet(session, packet)

    def _handshake_packet(self, session: Session, packet) -> None:
        if isinstance(packet, proto.VersionAck):
            if packet.version != proto.PROTOCOL_VERSION:
                self._send_error(
                    session, proto.ErrorCode.UNSUPPORTED_VERSION, packet.type_code
                )
                self._disconnect(session)
                return
            session.version_ok = True
            return
        if isinstance(packet, proto.AuthReq):
            self._auth_request(session, packet)
            return
        self._send_error(session, proto.ErrorCode.ILLEGAL_IN_STATE, packet.type_code)

    def _auth_request(self, session: Session, packet: proto.AuthReq) -> None:
        failure: Optional[proto.ErrorCode] = None
        if not session.version_ok:
            failure = proto.ErrorCode.UNSUPPORTED_VERSION
        elif self.auth_key is None:
            if packet.mechanism != proto.Mechanism.NONE:
                failure = proto.ErrorCode.UNAUTHORIZED
        elif packet.mechanism != proto.Mechanism.KEYFILE:
            failure = proto.ErrorCode.UNAUTHORIZED
        elif packet.payload != self.auth_key:
            failure = proto.ErrorCode.UNAUTHORIZED
        if failure is None:
            session.state = AUTHED
            session.transport.send(proto.AuthOk())
            return
        session.auth_attempts += 1
        self._send_error(session, failure, packet.type_code)
        if session.auth_attempts >= MAX_AUTH_ATTEMPTS:
            self._disconnect(session)

    def _session_packet(self, session: Session, packet) -> None:
        handler = self._HANDLERS.get(type(packet))
        if handler is None:
            self._send_error(
                session, proto.ErrorCode.ILLEGAL_IN_STATE, packet.type_code
            )
            return
        handler(self, session, packet)

    # ------------------------------------------------------------------
    # Requests with replies

    def _on_get_driver_name(self, session: Session, packet) -> None:
        session.transport.send(proto.DriverName(self.driver.spec.name))

    def _on_get_display_size(self, session: Session, packet) -> None:
        spec = self.driver.spec
        session.transport.send(proto.DisplaySize(spec.cols, spec.rows))

    def _on_enter_tty(self, session: Session, packet: proto.EnterTty) -> None:
        if session.state not in (AUTHED, TTY):
            self._send_error(
                session, proto.ErrorCode.ILLEGAL_IN_STATE, packet.type_code
            )
            return
        if not packet.path:
            self._send_error(session, proto.ErrorCode.BAD_PARAMETER, packet.type_code)
            return
        spec = self.driver.spec
        self._entry_seq += 1
        session.binding = TtyBinding(
            session.id, packet.path, packet.key_mode, self._entry_seq
        )
        session.buffer = CellBuffer.blank(spec.cols, spec.rows)
        session.state = TTY
        session.transport.send(proto.Ack(packet.type_code))
        self._refocus(flush_if_winner=session.id)

    def _on_leave_tty(self, session: Session, packet) -> None:
        if session.state != TTY:
            self._send_error(
                session, proto.ErrorCode.ILLEGAL_IN_STATE, packet.type_code
            )
            return
        session.binding = None
        session.buffer = None
        session.key_pending.clear()
        session.state = AUTHED
        session.transport.send(proto.Ack(packet.type_code))
        self._refocus()

    def _on_set_focus(self, session: Session, packet: proto.SetFocus) -> None:
        try:
            self.focus_map = set_active(
                self.focus_map, packet.prefix, packet.active_child
            )
        except ValueError:
            self._send_error(session, proto.ErrorCode.BAD_PARAMETER, packet.type_code)
            return
        session.transport.send(proto.Ack(packet.type_code))
        self._refocus()

    # ------------------------------------------------------------------
    # Writes: no acknowledgements, asynchronous errors only

    def _on_write_text(self, session: Session, packet: proto.WriteText) -> None:
        if session.state != TTY:
            self._send_error(session, proto.ErrorCode.NOT_IN_MODE, packet.type_code)
            return
        spec = self.driver.spec
        try:
            row = render_text(self.table, packet.text, spec.cols, packet.cursor)
        except BadCursorError:
            self._send_error(session, proto.ErrorCode.BAD_PARAMETER, packet.type_code)
            return
        cells = row.cells + bytes(spec.cols * (spec.rows - 1))
        session.buffer = CellBuffer(spec.cols, spec.rows, cells, row.cursor)
        self._flush_if_focused(session)

    def _on_write_dots(self, session: Session, packet: proto.WriteDots) -> None:
        if session.state != TTY:
            self._send_error(session, proto.ErrorCode.NOT_IN_MODE, packet.type_code)
            return
        spec = self.driver.spec
        if len(packet.cells) != spec.cols * spec.rows:
            self._send_error(session, proto.ErrorCode.BAD_PARAMETER, packet.type_code)
            return
        session.buffer = CellBuffer(spec.cols, spec.rows, packet.cells, None)
        self._flush_if_focused(session)

    def _on_raw_packet(self, session: Session, packet: proto.RawPacket) -> None:
        if self.exclusive_owner is not session or session.state != RAW:
            self._send_error(session, proto.ErrorCode.NOT_IN_MODE, packet.type_code)
            return
        try:
            self.driver.send_packet(packet.data)
        except DriverError:
            self._send_error(session, proto.ErrorCode.BAD_PARAMETER, packet.type_code)

    # ------------------------------------------------------------------
    # Exclusive modes

    def _on_enter_raw(self, session: Session, packet: proto.EnterRaw) -> None:
        code = self._claim_device(session, packet.driver_name, require_raw=True)
        if code is not None:
            self._send_error(session, code, packet.type_code)
            return
        session.prior_state = session.state
        session.state = RAW
        self.exclusive_owner = session
        session.transport.send(proto.Ack(packet.type_code))

    def _on_leave_raw(self, session: Session, packet) -> None:
        if self.exclusive_owner is not session or session.state != RAW:
            self._send_error(
                session, proto.ErrorCode.ILLEGAL_IN_STATE, packet.type_code
            )
            return
        session.state = session.prior_state
        self.exclusive_owner = None
        session.transport.send(proto.Ack(packet.type_code))
        self._restore_device()

    def _on_suspend(self, session: Session, packet: proto.Suspend) -> None:
        code = self._claim_device(session, packet.driver_name, require_raw=False)
        if code is not None:
            self._send_error(session, code, packet.type_code)
            return
        session.prior_state = session.state
        session.state = SUSPEND
        self.exclusive_owner = session
        self.driver.close()
        session.transport.send(proto.Ack(packet.type_code))

    def _on_resume(self, session: Session, packet) -> None:
        if self.exclusive_owner is not session or session.state != SUSPEND:
            self._send_error(
                session, proto.ErrorCode.ILLEGAL_IN_STATE, packet.type_code
            )
            return
        self._reopen_driver()
        session.state = session.prior_state
        self.exclusive_owner = None
        session.transport.send(proto.Ack(packet.type_code))
        self._restore_device()

    def _claim_device(
        self, session: Session, driver_name: str, require_raw: bool
    ) -> Optional[proto.ErrorCode]:
        if session.state not in (AUTHED, TTY):
            return proto.ErrorCode.ILLEGAL_IN_STATE
        if self.exclusive_owner is not None:
            return proto.ErrorCode.DEVICE_BUSY
        if driver_name != self.driver.spec.name:
            return proto.ErrorCode.DRIVER_MISMATCH
        if require_raw and not self.driver.spec.supports_raw:
            return proto.ErrorCode.BAD_PARAMETER
        return None

    def _reopen_driver(self) -> None:
        try:
            self.driver.open()
        except DriverError:
            log.exception("driver reopen failed")

    # ------------------------------------------------------------------
    # Device events

    def handle_device_event(self, event) -> None:
        if isinstance(event, KeyPressed):
            self._deliver_key(event.code)
        elif isinstance(event, PacketReceived):
            owner = self.exclusive_owner
            if owner is not None and owner.state == RAW:
                owner.transport.send(proto.RawPacket(event.data))

    def _deliver_key(self, code: int) -> None:
        if self.exclusive_owner is not None or self._winner_id is None:
            return
        session = self.sessions.get(self._winner_id)
        if session is None or session.binding is None:
            return
        if session.binding.key_mode == proto.KEY_RAW:
            event = proto.KeyEvent(proto.KEY_RAW, code, 0)
        else:
            key_command = self.driver.key_table.translate(code)
            if key_command is None:
                return  # unmapped codes are dropped in command mode
            event = proto.KeyEvent(
                proto.KEY_COMMANDS, int(key_command.command), key_command.arg
            )
        if len(session.key_pending) >= KEY_QUEUE_LIMIT:
            session.key_pending.popleft()
            session.dropped += 1
        session.key_pending.append(event)
        self._pump_keys(session)

    def handle_drain(self, session: Session) -> None:
        if self.sessions.get(session.id) is session:
            self._pump_keys(session)

    def _pump_keys(self, session: Session) -> None:
        while session.key_pending and session.transport.can_accept():
            session.transport.send(session.key_pending.popleft())

    # ------------------------------------------------------------------
    # Focus and flushing

    def _tty_bindings(self):
        return [
            s.binding
            for s in self.sessions.values()
            if s.state == TTY and s.binding is not None
        ]

    def _refocus(self, flush_if_winner: Optional[int] = None) -> None:
        if self.exclusive_owner is not None:
            return  # nothing reaches the device; recomputed on release
        winner = resolve_focus(self._tty_bindings(), self.focus_map)
        if winner != self._winner_id:
            if winner is None:
                self._blank_device()
            else:
                self._write_device(self.sessions[winner].buffer)
        elif flush_if_winner is not None and winner == flush_if_winner:
            self._write_device(self.sessions[winner].buffer)
        self._winner_id = winner

    def _restore_device(self) -> None:
        """Unconditionally rewrite the display after exclusivity ends."""
        winner = resolve_focus(self._tty_bindings(), self.focus_map)
        self._winner_id = winner
        if winner is None:
            self._blank_device()
        else:
            self._write_device(self.sessions[winner].buffer)

    def _flush_if_focused(self, session: Session) -> None:
        if self.exclusive_owner is None and self._winner_id == session.id:
            self._write_device(session.buffer)

    def _write_device(self, buffer: Optional[CellBuffer]) -> None:
        if buffer is None or not self.driver.is_open:
            return
        try:
            self.driver.write_cells(buffer)
        except DriverError:
            log.exception("device write failed")

    def _blank_device(self) -> None:
        spec = self.driver.spec
        self._write_device(CellBuffer.blank(spec.cols, spec.rows))

    # ------------------------------------------------------------------

    def _send_error(self, session: Session, code: int, offending_type: int) -> None:
        session.transport.send(proto.Error(int(code), offending_type))

    _HANDLERS = {
        proto.GetDriverName: _on_get_driver_name,
        proto.GetDisplaySize: _on_get_display_size,
        proto.EnterTty: _on_enter_tty,
        proto.LeaveTty: _on_leave_tty,
        proto.SetFocus: _on_set_focus,
        proto.WriteText: _on_write_text,
        proto.WriteDots: _on_write_dots,
        proto.RawPacket: _on_raw_packet,
        proto.EnterRaw: _on_enter_raw,
        proto.LeaveRaw: _on_leave_raw,
        proto.Suspend: _on_suspend,
        proto.Resume: _on_resume,
    }


class SocketTransport:
    """Reader/writer thread pair bridging one socket to the event queue.

    ``send`` never blocks the dispatcher: frames go to an internal queue
    drained by the writer thread.  ``can_accept`` reports whether that
    backlog is small enough for more key events.
    """

    def __init__(self, sock: socket.socket, server: BrailleMuxServer):
        self._sock = sock
        self._server = server
        self._session: Optional[Session] = None
        self._out: queue.Queue = queue.Queue()
        self._closed = False
        self._lock = threading.Lock()
        sock.settimeout(None)

    def start(self, session: Session) -> None:
        self._session = session
        threading.Thread(
            target=self._read_loop, name=f"brld-read-{session.id}", daemon=True
        ).start()
        threading.Thread(
            target=self._write_loop, name=f"brld-write-{session.id}", daemon=True
        ).start()

    def send(self, packet) -> None:
        with self._lock:
            if self._closed:
                return
            self._out.put(proto.encode_packet(packet))

    def can_accept(self) -> bool:
        return not self._closed and self._out.qsize() < _SEND_BACKLOG_LIMIT

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            self._out.put(None)

    def _read_loop(self) -> None:
        decoder = proto.FrameDecoder()
        session = self._session
        while True:
            try:
                data = self._sock.recv(65536)
            except OSError:
                break
            if not data:
                break
            try:
                packets = decoder.feed(data)
            except proto.ProtocolError as exc:
                self._server.submit("protocol_error", session, exc)
                return
            for packet in packets:
                self._server.submit("packet", session, packet)
        self._server.submit("disconnect", session)

    def _write_loop(self) -> None:
        while True:
            item = self._out.get()
            if item is None:
                break
            try:
                self._sock.sendall(item)
            except OSError:
                break
            self._server.submit("drain", self._session)
        self.close()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def serve(server: BrailleMuxServer, listen_sock: socket.socket) -> None:
    """Accept connections until the listening socket is closed."""
    while True:
        try:
            sock, _peer = listen_sock.accept()
        except OSError:
            return
        if sock.family == socket.AF_INET:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        server.submit("connect", SocketTransport(sock, server))


def _load_auth(spec: str) -> Optional[bytes]:
    if spec == "none":
        return None
    scheme, sep, path = spec.partition(":")
    if scheme != "keyfile" or not sep or not path:
        raise ValueError(f"bad auth spec {spec!r}: want none or keyfile:PATH")
    key = open(path, "rb").read()
    if not key or len(key) > MAX_KEYFILE_BYTES:
        raise ValueError(f"key file must be 1..{MAX_KEYFILE_BYTES} bytes")
    return key


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="brld", description="braille device multiplexing daemon"
    )
    parser.add_argument(
        "--driver", choices=("simscript", "simterm"), default="simscript"
    )
    parser.add_argument("--driver-config", metavar="PATH")
    parser.add_argument(
        "--listen", default=DEFAULT_ADDRESS, metavar="tcp:HOST:PORT|local:PATH"
    )
    parser.add_argument("--auth", default="none", metavar="none|keyfile:PATH")
    parser.add_argument("--table", metavar="PATH", help="braille table file")
    args = parser.parse_args(argv)

    try:
        address = parse_address(args.listen)
        auth_key = _load_auth(args.auth)
        table = load_table(args.table) if args.table else None
        driver = create_driver(args.driver, args.driver_config)
        listen_sock = address.listen()
    except (ValueError, OSError) as exc:
        print(f"brld: {exc}", file=sys.stderr)
        return 2

    server = BrailleMuxServer(driver, auth_key=auth_key, table=table)
    try:
        server.start()
    except DriverError as exc:
        print(f"brld: {exc}", file=sys.stderr)
        listen_sock.close()
        return 2
    try:
        signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
    except ValueError:
        pass  # not on the main thread; embedder handles shutdown
    print(f"listening on {bound_address(address, listen_sock)}", flush=True)
    try:
        serve(server, listen_sock)
    except (KeyboardInterrupt, SystemExit):
        pass
    finally:
        listen_sock.close()
        server.stop()
    return 0


def cli() -> None:
    logging.basicConfig(level=logging.WARNING)
    sys.exit(main())


if __name__ == "__main__":
    cli()
