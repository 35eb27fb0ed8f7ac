"""Client library against a live daemon on a simscript device."""

import pytest

from braillemux import client, proto
from braillemux.braille import default_table, render_text
from braillemux.client import (
    AuthFailed,
    ConnectFailed,
    ConnectionLost,
    NotInRaw,
    NotInTty,
    RequestError,
)
from braillemux.drivers import Command
from braillemux.netaddr import AddressError
from braillemux.proto import ErrorCode

COLS = 8


def w_line(text, cursor=0):
    row = render_text(default_table(), text, COLS, cursor)
    cells = " ".join(f"{0x2800 + c:04x}" for c in row.cells)
    return f"W {row.cursor or 0} {cells}"


def barrier(conn):
    """Wait until the server has processed everything sent so far."""
    conn.get_display_size()


# ---------------------------------------------------------------------------
# Connecting

def test_handshake_and_queries(live_server):
    with client.open_connection(live_server.address) as conn:
        assert conn.get_driver_name() == "simscript"
        assert conn.get_display_size() == (COLS, 1)


def test_connect_refused():
    with pytest.raises(ConnectFailed):
        client.open_connection("tcp:127.0.0.1:1", timeout=2.0)


def test_malformed_address_rejected():
    with pytest.raises(AddressError):
        client.open_connection("bogus")


def test_address_from_environment(live_server, monkeypatch):
    monkeypatch.setenv(client.ENV_ADDR, live_server.address)
    with client.open_connection() as conn:
        assert conn.get_driver_name() == "simscript"


def test_close_is_idempotent(live_server):
    conn = client.open_connection(live_server.address)
    conn.close()
    conn.close()
    with pytest.raises(ConnectionLost):
        conn.set_focus((), 1)


# ---------------------------------------------------------------------------
# Authorization

@pytest.fixture
def keyed_server(live_server_factory, tmp_path):
    keyfile = tmp_path / "secret.key"
    keyfile.write_bytes(b"letmein")
    server = live_server_factory("keyed", auth=f"keyfile:{keyfile}")
    return server, keyfile


def test_keyfile_auth_accepted(keyed_server):
    server, _ = keyed_server
    with client.open_connection(server.address, auth_key=b"letmein") as conn:
        assert conn.get_driver_name() == "simscript"


def test_keyfile_auth_wrong_key(keyed_server):
    server, _ = keyed_server
    with pytest.raises(AuthFailed):
        client.open_connection(server.address, auth_key=b"nope")


def test_keyfile_auth_missing_key(keyed_server):
    server, _ = keyed_server
    with pytest.raises(AuthFailed):
        client.open_connection(server.address)


def test_keyfile_from_environment(keyed_server, monkeypatch):
    server, keyfile = keyed_server
    monkeypatch.setenv(client.ENV_KEYFILE, str(keyfile))
    with client.open_connection(server.address) as conn:
        assert conn.get_driver_name() == "simscript"


# ---------------------------------------------------------------------------
# Tty mode

def test_write_reaches_device(live_server):
    with client.open_connection(live_server.address) as conn:
        conn.enter_tty_mode((1,))
        conn.set_focus((), 1)
        conn.write_text("hi")
        barrier(conn)
    assert w_line("hi") in live_server.log_lines()


def test_mode_checks_are_local(live_server):
    with client.open_connection(live_server.address) as conn:
        with pytest.raises(NotInTty):
            conn.write_text("hi")
        with pytest.raises(NotInTty):
            conn.read_key(0.1)
        with pytest.raises(NotInTty):
            conn.leave_tty_mode()
        with pytest.raises(NotInRaw):
            conn.send_raw(b"\x00")
        with pytest.raises(NotInRaw):
            conn.recv_raw(0.1)
        with pytest.raises(NotInRaw):
            conn.leave_raw_mode()


def test_key_event_round_trip(live_server):
    with client.open_connection(live_server.address) as conn:
        conn.enter_tty_mode((1,))
        conn.set_focus((), 1)
        conn.write_text("ready")
        barrier(conn)
        live_server.inject_key(0x05)
        event = conn.read_key(5.0)
    assert event == proto.KeyEvent(proto.KEY_COMMANDS, Command.HOME, 0)


def test_routing_key_carries_cell_index(live_server):
    with client.open_connection(live_server.address) as conn:
        conn.enter_tty_mode((1,))
        conn.set_focus((), 1)
        barrier(conn)
        live_server.inject_key(0x100 + 3)
        event = conn.read_key(5.0)
    assert event == proto.KeyEvent(proto.KEY_COMMANDS, Command.ROUTE, 3)


def test_raw_key_mode_passes_device_codes(live_server):
    with client.open_connection(live_server.address) as conn:
        conn.enter_tty_mode((1,), key_mode=proto.KEY_RAW)
        conn.set_focus((), 1)
        barrier(conn)
        live_server.inject_key(0xBEEF)
        event = conn.read_key(5.0)
    assert event == proto.KeyEvent(proto.KEY_RAW, 0xBEEF, 0)


def test_read_key_timeout_returns_none(live_server):
    with client.open_connection(live_server.address) as conn:
        conn.enter_tty_mode((1,))
        assert conn.read_key(0.05) is None


def test_bad_cursor_surfaces_as_async_error(live_server):
    with client.open_connection(live_server.address) as conn:
        conn.enter_tty_mode((1,))
        conn.write_text("hi", cursor=COLS + 5)  # does not raise
        error = conn.next_error(5.0)
        assert isinstance(error, RequestError)
        assert error.code == ErrorCode.BAD_PARAMETER
        assert error.offending_type == proto.WriteText.type_code
        conn.write_text("ok")  # connection still usable
        assert conn.next_error(0.05) is None


def test_request_errors_raise(live_server):
    with client.open_connection(live_server.address) as conn:
        with pytest.raises(RequestError) as exc:
            conn.enter_tty_mode(())
        assert exc.value.code == ErrorCode.BAD_PARAMETER
        # bypass the local mode guard to see the server's own check
        with pytest.raises(RequestError) as exc:
            conn._request(proto.LeaveTty())
        assert exc.value.code == ErrorCode.ILLEGAL_IN_STATE


def test_focus_switch_between_two_clients(live_server):
    with client.open_connection(live_server.address) as a, client.open_connection(
        live_server.address
    ) as b:
        a.enter_tty_mode((1,))
        b.enter_tty_mode((2,))
        a.set_focus((), 1)
        a.write_text("aa")
        b.write_text("bb")
        barrier(a)
        barrier(b)
        assert live_server.log_lines()[-1] == w_line("aa")
        a.set_focus((), 2)
        barrier(a)
        assert live_server.log_lines()[-1] == w_line("bb")


# ---------------------------------------------------------------------------
# Raw mode and suspension

def test_raw_mode_echo_round_trip(live_server):
    with client.open_connection(live_server.address) as conn:
        conn.enter_raw_mode("simscript")
        conn.send_raw(b"\x10\x20\x30")
        assert conn.recv_raw(5.0) == b"\x10\x20\x30"  # device echoes
        conn.leave_raw_mode()


def test_raw_mode_receives_injected_packets(live_server):
    with client.open_connection(live_server.address) as conn:
        conn.enter_raw_mode("simscript")
        live_server.inject_packet(b"\xaa\xbb")
        assert conn.recv_raw(5.0) == b"\xaa\xbb"


def test_raw_mode_is_exclusive(live_server):
    with client.open_connection(live_server.address) as first, client.open_connection(
        live_server.address
    ) as second:
        first.enter_raw_mode("simscript")
        with pytest.raises(RequestError) as exc:
            second.enter_raw_mode("simscript")
        assert exc.value.code == ErrorCode.DEVICE_BUSY
        first.leave_raw_mode()
        second.enter_raw_mode("simscript")  # now free


def test_raw_mode_checks_driver_name(live_server):
    with client.open_connection(live_server.address) as conn:
        with pytest.raises(RequestError) as exc:
            conn.enter_raw_mode("bogusdrv")
        assert exc.value.code == ErrorCode.DRIVER_MISMATCH


def test_suspend_resume_round_trip(live_server):
    with client.open_connection(live_server.address) as writer:
        writer.enter_tty_mode((1,))
        writer.set_focus((), 1)
        writer.write_text("one")
        barrier(writer)
        with client.open_connection(live_server.address) as owner:
            owner.suspend_driver("simscript")
            live_server.wait_for_log(lambda lines: lines and lines[-1] == "C")
            writer.write_text("two")
            barrier(writer)
            assert live_server.log_lines()[-1] == "C"  # nothing while closed
            owner.resume_driver()
            lines = live_server.wait_for_log(
                lambda lines: lines and lines[-1].startswith("W")
            )
            # reopen logs its banner, then exactly one flush of the latest image
            assert lines[-3:] == ["C", f"O simscript {COLS} 1", w_line("two")]


# ---------------------------------------------------------------------------
# Connection loss

def test_server_death_raises_connection_lost(live_server_factory):
    server = live_server_factory("doomed")
    conn = client.open_connection(server.address)
    conn.enter_tty_mode((1,))
    server.proc.kill()
    server.proc.wait()
    with pytest.raises(ConnectionLost):
        conn.read_key(5.0)
    with pytest.raises(ConnectionLost):
        conn.write_text("hi")
    conn.close()
