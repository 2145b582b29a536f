"""Connectivity graphs, one-hop networks, clique/independent-set enumeration
and the Monte Carlo clique coverage geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Hashable, Iterable, Mapping

import numpy as np

NodeId = Hashable


def edge_key(u: NodeId, v: NodeId) -> tuple:
    """Canonical (sorted) form of an undirected pair."""
    return (u, v) if u <= v else (v, u)


_edge = edge_key


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph. Edges are stored as sorted pairs."""

    nodes: frozenset
    edges: frozenset = frozenset()

    def __post_init__(self):
        nodes = frozenset(self.nodes)
        edges = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            if u not in nodes or v not in nodes:
                raise ValueError(f"edge ({u!r}, {v!r}) references unknown node")
            edges.add(_edge(u, v))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", frozenset(edges))

    @classmethod
    def from_adjacency(cls, adj: Mapping[NodeId, Iterable[NodeId]]) -> "Graph":
        nodes = set(adj)
        edges = set()
        for u, nbrs in adj.items():
            for v in nbrs:
                nodes.add(v)
                edges.add(_edge(u, v))
        return cls(frozenset(nodes), frozenset(edges))

    @cached_property
    def adjacency(self) -> dict:
        adj = {u: set() for u in self.nodes}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return {u: frozenset(vs) for u, vs in adj.items()}

    def neighbors(self, u: NodeId) -> frozenset:
        return self.adjacency[u]

    def has_edge(self, u: NodeId, v: NodeId) -> bool:
        return u != v and _edge(u, v) in self.edges

    def degree(self, u: NodeId) -> int:
        return len(self.adjacency[u])

    def subgraph(self, keep: Iterable[NodeId]) -> "Graph":
        keep = frozenset(keep) & self.nodes
        return Graph(keep, frozenset(e for e in self.edges if e[0] in keep and e[1] in keep))

    def complement(self) -> "Graph":
        ordered = sorted(self.nodes)
        edges = {(u, v) for u, v in combinations(ordered, 2) if (u, v) not in self.edges}
        return Graph(self.nodes, frozenset(edges))

    def components(self) -> list[frozenset]:
        """Connected components, ordered by their smallest member."""
        seen: set = set()
        out = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            comp = {start}
            stack = [start]
            while stack:
                u = stack.pop()
                for v in self.adjacency[u]:
                    if v not in comp:
                        comp.add(v)
                        stack.append(v)
            seen |= comp
            out.append(frozenset(comp))
        return out

    def is_connected(self) -> bool:
        return len(self.components()) <= 1


@dataclass(frozen=True)
class Clique:
    members: frozenset

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(self.members))
        if not self.members:
            raise ValueError("a clique has at least one member")

    @property
    def key(self) -> tuple:
        """Canonical identity: the sorted member tuple."""
        return tuple(sorted(self.members))

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, u) -> bool:
        return u in self.members

    def __lt__(self, other: "Clique") -> bool:
        return self.key < other.key

    def __repr__(self) -> str:
        return "Clique({" + ", ".join(map(repr, self.key)) + "})"


def sorted_cliques(cliques: Iterable[Clique]) -> list[Clique]:
    return sorted(cliques, key=lambda c: c.key)


def is_clique(g: Graph, members: Iterable[NodeId]) -> bool:
    members = list(members)
    return all(g.has_edge(u, v) for u, v in combinations(members, 2))


@dataclass(frozen=True)
class OneHopNetwork:
    """A node's local view: itself, its mutual neighbors and the edges among them.

    ``edge_distances`` maps a sorted node pair to meters once ranging is known.
    """

    owner: NodeId
    graph: Graph
    edge_distances: Mapping[tuple, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.owner not in self.graph.nodes:
            raise ValueError("owner must be part of its one-hop network")
        for u in self.graph.nodes:
            if u != self.owner and not self.graph.has_edge(self.owner, u):
                raise ValueError(f"{u!r} is not adjacent to owner {self.owner!r}")

    def distance(self, u: NodeId, v: NodeId) -> float | None:
        return self.edge_distances.get(_edge(u, v))

    def with_distances(self, distances: Mapping[tuple, float]) -> "OneHopNetwork":
        kept = {}
        for (u, v), d in distances.items():
            e = _edge(u, v)
            if e in self.graph.edges:
                kept[e] = d
        return OneHopNetwork(self.owner, self.graph, kept)


def build_one_hop_network(owner: NodeId, neighbor_sets: Mapping[NodeId, Iterable[NodeId]]) -> OneHopNetwork:
    """Build ``owner``'s one-hop network from broadcast neighbor sets.

    Only mutual claims count: a neighbor whose own set omits the owner is
    dropped, and an edge (u, v) among neighbors needs u in N_v and v in N_u.
    """
    sets = {u: frozenset(vs) for u, vs in neighbor_sets.items()}
    own = sets.get(owner, frozenset())
    members = {v for v in own if v != owner and owner in sets.get(v, frozenset())}
    edges = {_edge(owner, v) for v in members}
    for u, v in combinations(sorted(members), 2):
        if v in sets[u] and u in sets[v]:
            edges.add((u, v))
    return OneHopNetwork(owner, Graph(frozenset(members | {owner}), frozenset(edges)))


def maximal_cliques(g: Graph) -> set[Clique]:
    """All inclusion-maximal cliques (Bron-Kerbosch with Tomita pivoting).

    Isolated nodes come back as singleton cliques.
    """
    if not g.nodes:
        raise ValueError("graph has no nodes")
    adj = g.adjacency
    out: set[Clique] = set()

    def expand(r: set, p: set, x: set) -> None:
        if not p and not x:
            out.add(Clique(frozenset(r)))
            return
        # pivot maximizing |P ∩ N(u)|; ties resolved by ordering for reproducibility
        pivot = max(sorted(p | x), key=lambda u: len(p & adj[u]))
        for v in sorted(p - adj[pivot]):
            expand(r | {v}, p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    expand(set(), set(g.nodes), set())
    return out


def maximal_independent_sets(g: Graph) -> set[frozenset]:
    """Inclusion-maximal independent sets, i.e. maximal cliques of the complement."""
    return {c.members for c in maximal_cliques(g.complement())}


def _disk_hits(points: np.ndarray, centers: np.ndarray, radius: float) -> np.ndarray:
    """Boolean (n_points, n_centers) membership matrix."""
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d2 <= radius * radius


def union_coverage_counts(
    centers: np.ndarray, radius: float, samples: int, seed: int
) -> tuple[int, np.ndarray]:
    """Points falling inside the union of disks, and per-disk hit counts."""
    hits = union_membership(centers, radius, samples, seed)
    in_union = hits.any(axis=1)
    return int(in_union.sum()), hits[in_union].sum(axis=0)


def union_membership(
    centers: np.ndarray, radius: float, samples: int, seed: int, chunk: int = 250_000
) -> np.ndarray:
    """Per-sample disk membership for points drawn uniformly over the union's bounding box."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    lo = centers.min(axis=0) - radius
    hi = centers.max(axis=0) + radius
    rng = np.random.default_rng(seed)
    parts = []
    remaining = samples
    while remaining > 0:
        n = min(chunk, remaining)
        pts = lo + rng.random((n, 2)) * (hi - lo)
        parts.append(_disk_hits(pts, centers, radius))
        remaining -= n
    return np.concatenate(parts, axis=0)


def clique_coverage_ratio(
    positions: Iterable[tuple[float, float]], radius: float, samples: int = 1_000_000, seed: int = 0
) -> float:
    """Worst-case share of a clique's covered area that a single member covers.

    Monte Carlo over the bounding box of the union of disks; deterministic for
    a given seed.
    """
    centers = np.asarray(list(positions), dtype=float).reshape(-1, 2)
    if len(centers) == 0:
        raise ValueError("no positions")
    if samples < 100_000:
        raise ValueError("need at least 1e5 samples")
    tol = 1e-9 * max(radius, 1.0)
    for a, b in combinations(range(len(centers)), 2):
        if math.dist(centers[a], centers[b]) > radius + tol:
            raise ValueError(
                f"positions {a} and {b} are {math.dist(centers[a], centers[b]):.6g} apart, beyond radius {radius}"
            )
    union, per_disk = union_coverage_counts(centers, radius, samples, seed)
    return float(per_disk.min() / union)
