"""Emergency message carried out of a self-rescue group."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..graph import NodeId


@dataclass(frozen=True)
class LocationRecord:
    node: NodeId
    lat: float | None
    lon: float | None
    fix_time: float | None
    accuracy: float | None


@dataclass(frozen=True)
class RelativePosition:
    node: NodeId
    x: float | None  # meters in the group frame; None marks an outlier
    y: float | None

    @property
    def outlier(self) -> bool:
        return self.x is None


@dataclass(frozen=True)
class EmergencyMessage:
    group_size: int
    trapped_at: float
    last_known_locations: tuple
    relative_positions: tuple

    def __post_init__(self):
        located = {r.node for r in self.last_known_locations}
        ids = located | {p.node for p in self.relative_positions}
        if self.group_size != len(ids):
            raise ValueError(f"group size {self.group_size} but {len(ids)} distinct nodes")
        if located != ids:
            raise ValueError("every member needs a last-known-location record")

    @property
    def outliers(self) -> frozenset:
        return frozenset(p.node for p in self.relative_positions if p.outlier)

    def position_of(self, node: NodeId):
        for p in self.relative_positions:
            if p.node == node:
                return None if p.outlier else (p.x, p.y)
        raise KeyError(node)

    def to_dict(self) -> dict:
        return {
            "group_size": self.group_size,
            "trapped_at_s": self.trapped_at,
            "last_known_locations": [vars(r) for r in self.last_known_locations],
            "relative_positions_m": [vars(p) for p in self.relative_positions],
        }


def compose_emergency_message(state, clock: Callable[[], float] | None = None) -> EmergencyMessage:
    """Build the message from a node's finished protocol state.

    ``trapped_at`` is the group's trigger time when known, else ``clock()``.
    """
    members = sorted(state.group)
    locs = []
    for u in members:
        loc = state.locations.get(u)
        locs.append(LocationRecord(u, getattr(loc, "lat", None), getattr(loc, "lon", None),
                                   getattr(loc, "fix_time", None), getattr(loc, "accuracy", None)))
    final = state.final
    rel = []
    for u in members:
        if final is not None and u in final.positions:
            x, y = final.positions[u]
            rel.append(RelativePosition(u, float(x), float(y)))
        else:
            rel.append(RelativePosition(u, None, None))
    trapped = state.trapped_at
    if trapped is None:
        trapped = clock() if clock is not None else 0.0
    return EmergencyMessage(len(members), float(trapped), tuple(locs), tuple(rel))
