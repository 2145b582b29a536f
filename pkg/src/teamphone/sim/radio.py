"""Unit-disk radio with blocking obstacles, scripted link outages and cellular regions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping

from ..graph import Graph, NodeId, edge_key

Point = tuple


def _orient(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    """True when the closed segments share a point."""
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True

    def on(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (
        (d1 == 0 and on(q1, q2, p1))
        or (d2 == 0 and on(q1, q2, p2))
        or (d3 == 0 and on(p1, p2, q1))
        or (d4 == 0 and on(p1, p2, q2))
    )


@dataclass(frozen=True)
class Obstacle:
    a: Point
    b: Point

    def blocks(self, p: Point, q: Point) -> bool:
        return segments_cross(p, q, self.a, self.b)


def in_range(p: Point, q: Point, range_p: float, range_q: float, obstacles=()) -> bool:
    if math.dist(p, q) > min(range_p, range_q):
        return False
    return not any(o.blocks(p, q) for o in obstacles)


def connectivity(positions: Mapping[NodeId, Point], ranges: Mapping[NodeId, float] | float, obstacles=()) -> Graph:
    """Unit-disk graph: an edge iff within both ranges and no obstacle in between."""
    nodes = sorted(positions)
    if not isinstance(ranges, Mapping):
        ranges = {u: float(ranges) for u in nodes}
    edges = {
        edge_key(u, v)
        for u, v in combinations(nodes, 2)
        if in_range(positions[u], positions[v], ranges[u], ranges[v], obstacles)
    }
    return Graph(frozenset(nodes), frozenset(edges))


@dataclass(frozen=True)
class Disc:
    center: Point
    radius: float

    def contains(self, p: Point) -> bool:
        return math.dist(p, self.center) <= self.radius


@dataclass(frozen=True)
class Polygon:
    vertices: tuple

    def contains(self, p: Point) -> bool:
        x, y = p
        inside = False
        pts = self.vertices
        for (x1, y1), (x2, y2) in zip(pts, pts[1:] + pts[:1]):
            if _orient((x1, y1), (x2, y2), p) == 0 and min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
                return True
            if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * (x2 - x1) / (y2 - y1):
                inside = not inside
        return inside


@dataclass(frozen=True)
class CellularCoverage:
    regions: tuple = ()

    def contains(self, p: Point) -> bool:
        return any(r.contains(p) for r in self.regions)


def cellular_status(position: Point, coverage: CellularCoverage, role: str = "messaging") -> bool:
    if role == "command-center":
        return True
    return coverage.contains(position)


@dataclass(frozen=True)
class LinkOutage:
    """A pair forced out of contact during ``[start, end)`` seconds."""

    u: NodeId
    v: NodeId
    start: float
    end: float

    def covers(self, u: NodeId, v: NodeId, t: float) -> bool:
        return edge_key(u, v) == edge_key(self.u, self.v) and self.start <= t < self.end


@dataclass
class RadioModel:
    """Time-varying link predicate over mobile nodes."""

    mobility: Mapping[NodeId, object]
    ranges: Mapping[NodeId, float]
    obstacles: tuple = ()
    outages: tuple = ()
    coverage: CellularCoverage = field(default_factory=CellularCoverage)
    roles: Mapping[NodeId, str] = field(default_factory=dict)

    def position(self, u: NodeId, t: float) -> Point:
        return self.mobility[u].position_at(t)

    def linked(self, u: NodeId, v: NodeId, t: float) -> bool:
        if u == v or u not in self.ranges or v not in self.ranges:
            return False
        if any(o.covers(u, v, t) for o in self.outages):
            return False
        return in_range(self.position(u, t), self.position(v, t), self.ranges[u], self.ranges[v], self.obstacles)

    def neighbors(self, u: NodeId, t: float, among=None) -> list:
        pool = self.ranges if among is None else among
        return sorted(v for v in pool if self.linked(u, v, t))

    def cellular(self, u: NodeId, t: float) -> bool:
        return cellular_status(self.position(u, t), self.coverage, self.roles.get(u, "messaging"))

    def graph(self, t: float, among=None) -> Graph:
        nodes = sorted(self.ranges if among is None else among)
        edges = {edge_key(u, v) for u, v in combinations(nodes, 2) if self.linked(u, v, t)}
        return Graph(frozenset(nodes), frozenset(edges))
