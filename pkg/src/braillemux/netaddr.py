"""Server address notation shared by the daemon, the client, and the tools.

Two address families::

    tcp:HOST:PORT     TCP stream socket (port 0 lets the OS pick)
    local:PATH        Unix domain stream socket at PATH

The default address is ``tcp:127.0.0.1:4101``.
"""

from __future__ import annotations

import os
import socket
from dataclasses import dataclass
from typing import Union

DEFAULT_ADDRESS = "tcp:127.0.0.1:4101"


class AddressError(ValueError):
    """Raised for address strings that do not parse."""


@dataclass(frozen=True)
class TcpAddress:
    host: str
    port: int

    def __str__(self) -> str:
        return f"tcp:{self.host}:{self.port}"

    def listen(self, backlog: int = 16) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self.host, self.port))
        sock.listen(backlog)
        return sock

    def connect(self, timeout: float = 10.0) -> socket.socket:
        return socket.create_connection((self.host, self.port), timeout=timeout)


@dataclass(frozen=True)
class LocalAddress:
    path: str

    def __str__(self) -> str:
        return f"local:{self.path}"

    def listen(self, backlog: int = 16) -> socket.socket:
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.bind(self.path)
        sock.listen(backlog)
        return sock

    def connect(self, timeout: float = 10.0) -> socket.socket:
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        sock.connect(self.path)
        return sock


Address = Union[TcpAddress, LocalAddress]


def parse_address(text: str) -> Address:
    scheme, sep, rest = text.partition(":")
    if not sep or not rest:
        raise AddressError(f"bad address {text!r}: want tcp:HOST:PORT or local:PATH")
    if scheme == "tcp":
        host, sep, port_text = rest.rpartition(":")
        if not sep or not host:
            raise AddressError(f"bad address {text!r}: want tcp:HOST:PORT")
        try:
            port = int(port_text)
        except ValueError:
            raise AddressError(f"bad port {port_text!r} in {text!r}") from None
        if not 0 <= port <= 65535:
            raise AddressError(f"port {port} out of range in {text!r}")
        return TcpAddress(host, port)
    if scheme == "local":
        return LocalAddress(rest)
    raise AddressError(f"unknown address scheme {scheme!r} in {text!r}")


def bound_address(address: Address, sock: socket.socket) -> Address:
    """The address a listening socket actually bound (resolves port 0)."""
    if isinstance(address, TcpAddress):
        host, port = sock.getsockname()[:2]
        return TcpAddress(host, port)
    return address
