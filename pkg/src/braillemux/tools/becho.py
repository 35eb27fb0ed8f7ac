"""Echo demo: write a prompt to the display, wait for one key, print it.

Exit codes: 0 key received, 2 timed out, 1 connection or server error.
"""

from __future__ import annotations

import argparse
import sys

from braillemux import client
from braillemux.tools.common import add_connection_args, connect, describe_key, parse_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="becho", description="show a prompt and echo one braille key"
    )
    add_connection_args(parser)
    parser.add_argument(
        "--path", type=parse_path, default=(1,), help="focus path to bind (default 1)"
    )
    parser.add_argument("--text", default="Press any key", help="prompt text")
    parser.add_argument(
        "--timeout", type=float, default=5.0, help="seconds to wait for a key"
    )
    args = parser.parse_args(argv)
    if not args.path:
        parser.error("--path must not be empty")

    try:
        conn = connect(args)
    except client.ClientError as exc:
        print(f"becho: {exc}", file=sys.stderr)
        return 1
    try:
        conn.enter_tty_mode(args.path)
        conn.write_text(args.text)
        event = conn.read_key(timeout=args.timeout)
        if event is None:
            print("becho: timed out waiting for a key", file=sys.stderr)
            return 2
        print(describe_key(event))
        conn.leave_tty_mode()
        return 0
    except client.ClientError as exc:
        print(f"becho: {exc}", file=sys.stderr)
        return 1
    finally:
        conn.close()


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
