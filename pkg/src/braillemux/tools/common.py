"""Flag plumbing and output formatting shared by the command-line tools.

Every tool accepts ``--addr`` and ``--keyfile`` and falls back to the
BRLMUX_ADDR / BRLMUX_KEYFILE environment variables (handled by the client
library when the flags are absent).
"""

from __future__ import annotations

import argparse
from typing import Optional, Tuple

from braillemux import client, proto
from braillemux.drivers import Command

COMMAND_LABELS = {
    Command.LINE_UP: "LineUp",
    Command.LINE_DOWN: "LineDown",
    Command.PAN_LEFT: "PanLeft",
    Command.PAN_RIGHT: "PanRight",
    Command.HOME: "Home",
    Command.TOP: "Top",
    Command.BOTTOM: "Bottom",
    Command.ROUTE: "Route",
}


def add_connection_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--addr", metavar="tcp:HOST:PORT|local:PATH", help="server address"
    )
    parser.add_argument("--keyfile", metavar="PATH", help="authorization key file")


def connect(args: argparse.Namespace) -> client.Connection:
    auth_key: Optional[bytes] = None
    if args.keyfile:
        auth_key = open(args.keyfile, "rb").read()
    return client.open_connection(args.addr, auth_key=auth_key)


def parse_path(text: str) -> Tuple[int, ...]:
    """Parse a focus path flag: comma-separated integers, '' for the root."""
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad focus path {text!r}") from None


def describe_key(event: proto.KeyEvent) -> str:
    """Render a key event the way the echo tool prints it."""
    if event.kind == proto.KEY_RAW:
        return f"raw 0x{event.code:x}"
    try:
        label = COMMAND_LABELS[Command(event.code)]
    except (ValueError, KeyError):
        return f"command 0x{event.code:x}"
    if event.code == Command.ROUTE:
        return f"command {label} {event.arg}"
    return f"command {label}"
