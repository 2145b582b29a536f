"""GPS-free relative positioning for a self-rescue group.

Distances come from a log-distance path-loss model (or are replayed from
measurements). A frame owner seeds a coordinate system from its largest
clique; further nodes are placed by intersecting two anchor circles and the
mirror ambiguity is resolved with a consistency score that uses both the
residuals of extra measured edges and the absence of edges to nodes that would
otherwise be within radio range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .graph import Graph, NodeId, OneHopNetwork, edge_key as _edge, maximal_cliques

GEOMETRY_TOL_M = 0.5
MERGE_TOL_M = 1.0

Point = tuple


# --- ranging ---------------------------------------------------------------


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance path loss with log-normal shadowing."""

    exponent: float = 3.0
    sigma_db: float = 2.0
    ref_loss_db: float = 40.0
    ref_distance_m: float = 1.0
    tx_power_dbm: float = 15.0

    def rssi(self, distance: float, shadow_db: float = 0.0) -> float:
        loss = self.ref_loss_db + 10 * self.exponent * math.log10(distance / self.ref_distance_m)
        return self.tx_power_dbm - loss - shadow_db

    def invert(self, rssi_dbm: float) -> float:
        loss = self.tx_power_dbm - rssi_dbm
        return self.ref_distance_m * 10 ** ((loss - self.ref_loss_db) / (10 * self.exponent))


def estimate_distance(true_distance: float, noise_seed, model: PathLossModel = PathLossModel()) -> float:
    """One directional estimate: synthesize an RSSI reading and invert it."""
    if true_distance <= 0:
        raise ValueError("distance must be positive")
    shadow = 0.0
    if model.sigma_db > 0:
        shadow = float(np.random.default_rng(noise_seed).normal(0.0, model.sigma_db))
    return model.invert(model.rssi(true_distance, shadow))


@dataclass(frozen=True)
class DistanceMeasure:
    pair: tuple
    meters: float
    source: str = "rssi-model"

    def __post_init__(self):
        u, v = self.pair
        object.__setattr__(self, "pair", _edge(u, v))
        if not self.meters > 0:
            raise ValueError(f"non-positive distance for {self.pair}")


def measure_pair(u: NodeId, v: NodeId, true_distance: float, seed: int, model: PathLossModel = PathLossModel()) -> DistanceMeasure:
    """Both endpoints estimate the distance; the pair keeps the mean."""
    a, b = _edge(u, v)
    fwd = estimate_distance(true_distance, [seed, 0, _stable_id(a), _stable_id(b)], model)
    back = estimate_distance(true_distance, [seed, 1, _stable_id(a), _stable_id(b)], model)
    return DistanceMeasure((a, b), (fwd + back) / 2)


def _stable_id(u: NodeId) -> int:
    # python's str hash is salted per process; derive a stable integer instead
    return int.from_bytes(str(u).encode()[:16].ljust(16, b"\0"), "big") % (2**63)


# --- assignments -------------------------------------------------------------


@dataclass(frozen=True)
class CoordinateAssignment:
    frame_owner: NodeId
    positions: Mapping[NodeId, Point] = field(default_factory=dict)
    outliers: frozenset = frozenset()
    # rank of the cascade step that fixed each position; lower wins on merge
    sources: Mapping[NodeId, int] = field(default_factory=dict)
    low_confidence: frozenset = frozenset()
    flagged_edges: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "outliers", frozenset(self.outliers) - set(self.positions))

    @property
    def positioned(self) -> frozenset:
        return frozenset(self.positions)

    def distance(self, u: NodeId, v: NodeId) -> float:
        return math.dist(self.positions[u], self.positions[v])


def _distances_of(net) -> Mapping[tuple, float]:
    return net.edge_distances if isinstance(net, OneHopNetwork) else net[1]


def _graph_of(net) -> Graph:
    return net.graph if isinstance(net, OneHopNetwork) else net[0]


def consistency_score(
    candidate: Point,
    node: NodeId,
    assignment: CoordinateAssignment,
    graph: Graph,
    distances: Mapping[tuple, float],
    radio_range: float | None,
    anchors: Iterable[NodeId] = (),
) -> float:
    """Penalty of putting ``node`` at ``candidate``; lower is more plausible.

    Each positioned non-anchor node adds the absolute residual of a measured
    edge, or, when no edge exists although the candidate would be within
    radio range, the depth of that range violation.
    """
    skip = set(anchors) | {node}
    score = 0.0
    for p in sorted(assignment.positions):
        if p in skip:
            continue
        d = math.dist(candidate, assignment.positions[p])
        measured = distances.get(_edge(node, p))
        if measured is not None:
            score += abs(d - measured)
        elif radio_range is not None and p in graph.nodes and node in graph.nodes and not graph.has_edge(node, p):
            if d < radio_range:
                score += radio_range - d
    return score


def circle_intersections(pa: Point, ra: float, pb: Point, rb: float, tol: float = GEOMETRY_TOL_M):
    """Mirror pair of points at distance ``ra`` from ``pa`` and ``rb`` from ``pb``.

    Returns ``(points, exact)``. When the circles miss each other by more than
    ``tol``, a single least-squares point on the anchor line is returned with
    ``exact`` False. Returns ``([], False)`` for coincident anchors.
    """
    ax, ay = pa
    bx, by = pb
    d = math.dist(pa, pb)
    if d < 1e-9:
        return [], False
    ux, uy = (bx - ax) / d, (by - ay) / d
    a = (ra * ra - rb * rb + d * d) / (2 * d)
    h2 = ra * ra - a * a
    miss = max(d - ra - rb, abs(ra - rb) - d, 0.0)
    if h2 >= 0 or miss <= tol:
        h = math.sqrt(max(h2, 0.0))
        base = (ax + a * ux, ay + a * uy)
        p1 = (base[0] - h * uy, base[1] + h * ux)
        p2 = (base[0] + h * uy, base[1] - h * ux)
        return ([p1] if h == 0 else [p1, p2]), True

    def cost(t):
        return (abs(t) - ra) ** 2 + (abs(t - d) - rb) ** 2

    options = [t for t in ((d - ra - rb) / 2,) if t < 0]
    options += [t for t in ((ra + d - rb) / 2,) if 0 <= t <= d]
    options += [t for t in ((ra + d + rb) / 2,) if t > d]
    t = min(options or [0.0, d], key=cost)
    return [(ax + t * ux, ay + t * uy)], False


def _placements(node, positions, graph, distances, radio_range, tol):
    """Mirror candidates for ``node`` from its two farthest-apart positioned neighbors.

    Returns ``([(score, point), ...] best first, exact)`` or None when no
    usable anchor pair exists.
    """
    nbrs = sorted(p for p in positions if _edge(node, p) in distances)
    best = None
    for a, b in combinations(nbrs, 2):
        sep = math.dist(positions[a], positions[b])
        if best is None or sep > best[0] + 1e-12:
            best = (sep, a, b)
    if best is None or best[0] < 1e-9:
        return None
    _, a, b = best
    pts, exact = circle_intersections(positions[a], distances[_edge(node, a)], positions[b], distances[_edge(node, b)], tol)
    if not pts:
        return None
    view = CoordinateAssignment(None, positions)
    scored = sorted(
        (round(consistency_score(p, node, view, graph, distances, radio_range, (a, b)), 9), p[1], p[0], p) for p in pts
    )
    return [(sc, p) for sc, _, _, p in scored], exact


def _with(assignment: CoordinateAssignment, **changes) -> CoordinateAssignment:
    fields = dict(
        frame_owner=assignment.frame_owner,
        positions=assignment.positions,
        outliers=assignment.outliers,
        sources=assignment.sources,
        low_confidence=assignment.low_confidence,
        flagged_edges=assignment.flagged_edges,
    )
    fields.update(changes)
    return CoordinateAssignment(**fields)


SEARCH_BUDGET = 4096


def extend_positions(
    assignment: CoordinateAssignment,
    net,
    radio_range: float | None = None,
    rank: int = 0,
    restrict: Iterable[NodeId] | None = None,
    tol: float = GEOMETRY_TOL_M,
    search: bool = True,
) -> CoordinateAssignment:
    """Position every node of ``net`` that can see two positioned neighbors.

    ``net`` is a :class:`OneHopNetwork` or a ``(graph, distances)`` pair.
    Candidates whose mirror choice is clear-cut go first, then those with
    more positioned neighbors, then by id. When both mirrors look equally
    plausible the choice is explored both ways (up to a budget) and the
    branch with the lowest total inconsistency is kept, since a later node
    can expose an earlier wrong mirror. Nodes left over become outliers.
    """
    graph, distances = _graph_of(net), _distances_of(net)
    scope = frozenset(graph.nodes if restrict is None else restrict)
    budget = [SEARCH_BUDGET if search else 0]
    best: list = [None]

    def step(positions: dict, order: list, total: float, low: frozenset) -> None:
        if best[0] is not None and total > best[0][0] + 1e-9:
            return
        cands = []
        for u in sorted(scope - set(positions)):
            k = sum(1 for p in positions if _edge(u, p) in distances)
            if k < 2:
                continue
            opts = _placements(u, positions, graph, distances, radio_range, tol)
            if opts is None:
                continue
            ranked, exact = opts
            clear = len(ranked) == 1 or ranked[1][0] - ranked[0][0] > tol
            cands.append((not clear, -k, u, ranked, exact))
        if not cands:
            if best[0] is None or total < best[0][0] - 1e-9:
                best[0] = (total, positions, order, low)
            return
        ambiguous, _, u, ranked, exact = min(cands, key=lambda c: c[:3])
        tries = ranked if ambiguous and budget[0] > 0 else ranked[:1]
        for score, pt in tries:
            if len(tries) > 1:
                budget[0] -= 1
            nxt = dict(positions)
            nxt[u] = pt
            step(nxt, order + [u], total + score, low if exact else low | {u})

    step(dict(assignment.positions), [], 0.0, frozenset(assignment.low_confidence))
    _, positions, order, low = best[0]
    sources = dict(assignment.sources)
    sources.update({u: rank for u in order})
    outliers = (set(assignment.outliers) | (set(graph.nodes) - set(positions))) - set(positions)
    return _with(assignment, positions=positions, sources=sources, outliers=frozenset(outliers), low_confidence=low)


def seed_clique(one_hop: OneHopNetwork) -> tuple:
    """The owner's largest maximal clique, ties broken by sorted member tuple."""
    cliques = [c for c in maximal_cliques(one_hop.graph) if one_hop.owner in c]
    best = min(cliques, key=lambda c: (-len(c), c.key))
    return best.key


def seed_coordinate_system(one_hop: OneHopNetwork, radio_range: float | None = None, rank: int = 0,
                           tol: float = GEOMETRY_TOL_M) -> CoordinateAssignment:
    """Owner at the origin, lowest-id clique member on +x, next member above the axis.

    Further clique members, and then the rest of the one-hop network, are
    placed with :func:`extend_positions`. A seed clique of two nodes gives a
    one-dimensional frame.
    """
    seeded = seed_frame(one_hop, radio_range, rank, tol)
    return extend_positions(seeded, one_hop, radio_range, rank, tol=tol)


def seed_frame(one_hop: OneHopNetwork, radio_range: float | None = None, rank: int = 0,
               tol: float = GEOMETRY_TOL_M) -> CoordinateAssignment:
    """Coordinates for the owner's seed clique only."""
    owner = one_hop.owner
    dist = one_hop.edge_distances
    members = [u for u in seed_clique(one_hop) if u != owner]
    positions = {owner: (0.0, 0.0)}
    flagged = set()
    if members:
        axis = members[0]
        d_oa = dist[_edge(owner, axis)]
        positions[axis] = (float(d_oa), 0.0)
        for third in members[1:]:
            d_o3 = dist[_edge(owner, third)]
            d_a3 = dist[_edge(axis, third)]
            x = (d_oa * d_oa + d_o3 * d_o3 - d_a3 * d_a3) / (2 * d_oa)
            y2 = d_o3 * d_o3 - x * x
            if y2 < 1e-12:
                # collinear or triangle inequality violated; try the next member
                if y2 < 0 and _triangle_slack(d_oa, d_o3, d_a3) > tol:
                    flagged.add(_edge(axis, third))
                continue
            positions[third] = (x, math.sqrt(y2))
            break
    base = CoordinateAssignment(owner, positions, sources={u: rank for u in positions}, flagged_edges=frozenset(flagged))
    seeded = extend_positions(base, one_hop, radio_range, rank, restrict=set(members) | {owner}, tol=tol)
    if len(seeded.positions) == 2 and len(members) > 1:
        # every other clique member is collinear with the axis: stay on the line
        positions = dict(seeded.positions)
        for u in members[1:]:
            d_o = dist[_edge(owner, u)]
            d_a = dist[_edge(members[0], u)]
            positions[u] = min(((d_o, 0.0), (-d_o, 0.0)), key=lambda p: (abs(abs(p[0] - d_oa) - d_a), p[0]))
        seeded = _with(seeded, positions=positions, sources={u: rank for u in positions})
    return _with(seeded, outliers=frozenset())


def _triangle_slack(a: float, b: float, c: float) -> float:
    return max(a - b - c, b - a - c, c - a - b, 0.0)


@dataclass(frozen=True)
class MergeResult:
    assignment: CoordinateAssignment
    queued: bool = False
    conflicts: tuple = ()


def merge_assignments(
    base: CoordinateAssignment,
    fragment: CoordinateAssignment,
    net=None,
    radio_range: float | None = None,
    rank: int = 0,
    tol: float = MERGE_TOL_M,
) -> MergeResult:
    """Fold a neighbor's fragment into ``base``.

    Positions are never removed. On disagreement beyond ``tol`` the value
    fixed earlier in the cascade (lower source rank) wins. If ``net`` is
    given, outliers are re-examined afterwards. A fragment in a different
    frame that shares fewer than two positioned nodes with ``base`` cannot be
    aligned and is reported as queued.
    """
    if not fragment.positions and not fragment.outliers:
        return MergeResult(base)
    if base.positions and fragment.positions and fragment.frame_owner != base.frame_owner:
        shared = set(base.positions) & set(fragment.positions)
        if len(shared) < 2:
            return MergeResult(base, queued=True)
        raise ValueError("fragments in a foreign frame must be re-expressed before merging")
    frame = base.frame_owner if base.positions else fragment.frame_owner
    positions = dict(base.positions)
    sources = dict(base.sources)
    conflicts = []
    for u in sorted(fragment.positions):
        p = fragment.positions[u]
        r = fragment.sources.get(u, rank)
        if u not in positions:
            positions[u], sources[u] = p, r
            continue
        if math.dist(p, positions[u]) > tol:
            conflicts.append(u)
        if r < sources.get(u, rank):
            positions[u], sources[u] = p, r
    merged = CoordinateAssignment(
        frame,
        positions,
        (base.outliers | fragment.outliers) - set(positions),
        sources,
        (base.low_confidence | fragment.low_confidence) & set(positions),
        base.flagged_edges | fragment.flagged_edges,
    )
    if net is not None:
        merged = extend_positions(merged, net, radio_range, rank)
    return MergeResult(merged, conflicts=tuple(conflicts))


def position_group(
    graph: Graph,
    distances: Mapping[tuple, float],
    initiator: NodeId,
    radio_range: float | None = None,
) -> CoordinateAssignment:
    """Centralized positioning from full knowledge: seed at ``initiator``, then extend."""
    comp = next(c for c in graph.components() if initiator in c)
    one_hop = OneHopNetwork(
        initiator,
        graph.subgraph(graph.neighbors(initiator) | {initiator}),
        {e: d for e, d in distances.items() if e[0] in graph.neighbors(initiator) | {initiator}
         and e[1] in graph.neighbors(initiator) | {initiator}},
    )
    seeded = seed_frame(one_hop, radio_range)
    sub = graph.subgraph(comp)
    dist = {e: d for e, d in distances.items() if e in sub.edges}
    return extend_positions(seeded, (sub, dist), radio_range)


def positionable_closure(graph: Graph, seed: Iterable[NodeId]) -> frozenset:
    """Graph-only oracle: grow ``seed`` by nodes with two members already inside."""
    inside = set(seed)
    changed = True
    while changed:
        changed = False
        for u in sorted(graph.nodes - inside):
            if len(graph.neighbors(u) & inside) >= 2:
                inside.add(u)
                changed = True
    return frozenset(inside)


def procrustes_error(estimated: Mapping[NodeId, Point], truth: Mapping[NodeId, Point]) -> float:
    """Mean position error after the best rigid motion (reflection allowed)."""
    ids = sorted(set(estimated) & set(truth))
    if not ids:
        return 0.0
    x = np.array([estimated[u] for u in ids], dtype=float)
    y = np.array([truth[u] for u in ids], dtype=float)
    xc, yc = x - x.mean(axis=0), y - y.mean(axis=0)
    u, _, vt = np.linalg.svd(xc.T @ yc)
    r = u @ vt
    return float(np.linalg.norm(xc @ r - yc, axis=1).mean())


def unit_disk_distances(positions: Mapping[NodeId, Point], radio_range: float) -> tuple[Graph, dict]:
    """Exact-distance unit-disk graph over ``positions``."""
    nodes = sorted(positions)
    dist = {}
    for u, v in combinations(nodes, 2):
        d = math.dist(positions[u], positions[v])
        if d <= radio_range:
            dist[_edge(u, v)] = d
    return Graph(frozenset(nodes), frozenset(dist)), dist
