"""Nested focus model: who owns the display right now.

Applications declare where they run as a list of integers (e.g. ``[7, 42]``
for window 42 of a desktop on virtual terminal 7).  Focus agents report the
active child at individual tree nodes; following those reports from the root
yields the active path, and the client bound to its longest prefix wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Optional, Tuple

FocusPath = Tuple[int, ...]
FocusMap = Mapping[FocusPath, int]

# Matches the wire cap on path depth; also bounds the derivation walk.
MAX_DEPTH = 8


@dataclass(frozen=True)
class TtyBinding:
    """One client's declared position in the focus tree.

    ``entry_seq`` increases with every binding the server creates, so the
    most recent binding wins ties between clients on the same path.
    """

    client_id: Hashable
    path: FocusPath
    key_mode: int
    entry_seq: int

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(e) for e in self.path))


def set_active(m: FocusMap, prefix: FocusPath, child: int) -> dict[FocusPath, int]:
    """Record that ``child`` is the active node under ``prefix``."""
    prefix = tuple(prefix)
    if len(prefix) > MAX_DEPTH - 1:
        raise ValueError(f"prefix deeper than {MAX_DEPTH - 1}: {len(prefix)}")
    updated = dict(m)
    updated[prefix] = child
    return updated


def derived_active_path(m: FocusMap) -> FocusPath:
    """Follow active-child reports from the root as deep as they go."""
    path: FocusPath = ()
    while path in m and len(path) < MAX_DEPTH:
        path = path + (m[path],)
    return path


def resolve_focus(bindings: Iterable[TtyBinding], m: FocusMap) -> Optional[Hashable]:
    """Pick the one client whose output reaches the device.

    Eligible bindings are those whose path is a prefix of the derived active
    path; the longest path wins, most recent binding breaking ties.  Returns
    None when no binding matches.
    """
    active = derived_active_path(m)
    best: Optional[TtyBinding] = None
    for binding in bindings:
        if active[: len(binding.path)] != binding.path:
            continue
        if best is None or (len(binding.path), binding.entry_seq) > (
            len(best.path),
            best.entry_seq,
        ):
            best = binding
    return best.client_id if best is not None else None
