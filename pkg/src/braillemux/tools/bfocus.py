"""One-shot focus agent: report the active child at one focus-tree node.

    bfocus --path ""  --active 2     # root: virtual terminal 2 is active
    bfocus --path 7   --active 42    # inside node 7: window 42 is active

Exit codes: 0 accepted, 1 rejected or connection error.
"""

from __future__ import annotations

import argparse
import sys

from braillemux import client
from braillemux.tools.common import add_connection_args, connect, parse_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bfocus", description="send one focus update to the server"
    )
    add_connection_args(parser)
    parser.add_argument(
        "--path",
        type=parse_path,
        required=True,
        help="focus-tree node ('' for the root, else comma-separated ints)",
    )
    parser.add_argument(
        "--active", type=int, required=True, help="active child at that node"
    )
    args = parser.parse_args(argv)

    try:
        with connect(args) as conn:
            conn.set_focus(args.path, args.active)
        return 0
    except client.ClientError as exc:
        print(f"bfocus: {exc}", file=sys.stderr)
        return 1


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
