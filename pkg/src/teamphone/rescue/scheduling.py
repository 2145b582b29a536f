"""Clique-based wake-up scheduling: wake-up frequency (gamma), scheduling
priority (theta), collision-free slot placement and the analytics around it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

from ..graph import Clique, Graph, NodeId, maximal_cliques, maximal_independent_sets, sorted_cliques
from ..sim.energy import POWER_AWAKE_MW, POWER_SLEEP_MW, EnergyLedger, as_fraction


class ScheduleConflict(RuntimeError):
    """No collision-free placement exists for a node's wake-up frequency."""


@dataclass(frozen=True)
class WakeParams:
    tau: float = 5.0
    hyperperiod_slots: int = 1
    start_time: float = 0.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.hyperperiod_slots < 1:
            raise ValueError("hyperperiod must span at least one slot")


@dataclass(frozen=True)
class SchedulingStats:
    gamma: Mapping[NodeId, Fraction]
    theta: Mapping[NodeId, Fraction]


@dataclass(frozen=True)
class WakeSchedule:
    owner: NodeId
    awake_slots: frozenset
    params: WakeParams
    # slots shared with an already-scheduled co-clique member (infeasible instances only)
    conflict_slots: frozenset = frozenset()

    @property
    def gamma(self) -> Fraction:
        return Fraction(len(self.awake_slots), self.params.hyperperiod_slots)

    def is_awake(self, slot: int) -> bool:
        return slot % self.params.hyperperiod_slots in self.awake_slots

    def slot_at(self, t: float) -> int:
        return math.floor((t - self.params.start_time) / self.params.tau)

    def awake_at(self, t: float) -> bool:
        return t >= self.params.start_time and self.is_awake(self.slot_at(t))

    def awake_count(self, slots: int) -> int:
        return sum(self.is_awake(s) for s in range(slots))


def compute_stats(cliques: Iterable[Clique]) -> SchedulingStats:
    gamma: dict = {}
    theta: dict = {}
    for c in cliques:
        share = Fraction(1, len(c))
        for u in c.members:
            gamma[u] = min(gamma.get(u, share), share)
            theta[u] = theta.get(u, Fraction(0)) + share
    return SchedulingStats(gamma, theta)


def rank_key(theta: Mapping[NodeId, Fraction], u: NodeId) -> tuple:
    """Scheduling priority: larger theta first, then smaller id."""
    return (-theta[u], u)


def scheduling_order(theta: Mapping[NodeId, Fraction], clique: Clique | Iterable[NodeId]) -> list:
    members = clique.members if isinstance(clique, Clique) else clique
    return sorted(members, key=lambda u: rank_key(theta, u))


def hyperperiod(gammas: Iterable[Fraction]) -> int:
    h = 1
    for g in gammas:
        h = math.lcm(h, Fraction(g).denominator)
    return h


def _evenly_spaced(need: int, h: int, blocked: set) -> frozenset | None:
    period = h // need
    for offset in range(period):
        slots = {offset + k * period for k in range(need)}
        if not slots & blocked:
            return frozenset(slots)
    return None


def _windowed(need: int, h: int, blocked: set) -> frozenset | None:
    period = h // need
    chosen = set()
    for w in range(need):
        free = [s for s in range(w * period, (w + 1) * period) if s not in blocked]
        if not free:
            return None
        chosen.add(free[0])
    return frozenset(chosen)


def assign_schedule(
    owner: NodeId,
    gamma: Fraction,
    prior_schedules: Mapping[NodeId, WakeSchedule],
    cliques_of_owner: Iterable[Clique],
    params: WakeParams,
    strict: bool = False,
) -> WakeSchedule:
    """Place ``gamma * H`` awake slots for ``owner``.

    Slots of already-scheduled co-clique members are off limits. Preference
    order: evenly spaced at the earliest phase offset; else the earliest free
    slot in each of the ``gamma * H`` equal windows; else the earliest free
    slots overall.

    Some topologies (odd holes such as a 5-cycle) admit no collision-free
    placement at all. Then the node keeps its frequency and takes the least
    crowded slots; the overlap is reported in ``conflict_slots``, or raised as
    :class:`ScheduleConflict` when ``strict``.
    """
    h = params.hyperperiod_slots
    need = Fraction(gamma) * h
    if need.denominator != 1:
        raise ValueError(f"gamma {gamma} does not divide hyperperiod {h}")
    need = int(need)
    peers = set()
    for c in cliques_of_owner:
        peers |= c.members
    peers.discard(owner)
    crowd = [0] * h
    for u in sorted(peers):
        sched = prior_schedules.get(u)
        if sched is not None:
            for slot in sched.awake_slots:
                crowd[slot] += 1
    blocked = {s for s in range(h) if crowd[s]}
    slots = _evenly_spaced(need, h, blocked) or _windowed(need, h, blocked)
    if slots is not None:
        return WakeSchedule(owner, slots, params)
    free = [s for s in range(h) if not crowd[s]]
    if len(free) >= need:
        return WakeSchedule(owner, frozenset(free[:need]), params)
    if strict:
        raise ScheduleConflict(
            f"{owner!r} needs {need} of {h} slots but only {len(free)} are free of co-clique wake-ups"
        )
    taken = sorted(range(h), key=lambda s: (crowd[s], s))[:need]
    return WakeSchedule(owner, frozenset(taken), params, frozenset(s for s in taken if crowd[s]))


def cliques_by_node(cliques: Iterable[Clique]) -> dict:
    out: dict = {}
    for c in sorted_cliques(cliques):
        for u in c.members:
            out.setdefault(u, []).append(c)
    return out


def schedule_network(g: Graph, tau: float = 5.0, start_time: float = 0.0, strict: bool = False) -> dict:
    """Centralized equivalent of the distributed cascade.

    Each node only depends on higher-ranked co-clique members, so processing
    nodes in global rank order yields the same schedules as the protocol.
    """
    cliques = maximal_cliques(g)
    stats = compute_stats(cliques)
    per_node = cliques_by_node(cliques)
    out: dict = {}
    for comp in g.components():
        params = WakeParams(tau, hyperperiod(stats.gamma[u] for u in comp), start_time)
        for u in sorted(comp, key=lambda v: rank_key(stats.theta, v)):
            out[u] = assign_schedule(u, stats.gamma[u], out, per_node[u], params, strict)
    return out


def clique_occupancy(clique: Clique, schedules: Mapping[NodeId, WakeSchedule], slots: int) -> list[int]:
    """Number of awake members of ``clique`` in each slot."""
    return [sum(schedules[u].is_awake(s) for u in clique.members) for s in range(slots)]


def vacancy_ratio(clique: Clique, schedules: Mapping[NodeId, WakeSchedule]) -> Fraction:
    h = max(schedules[u].params.hyperperiod_slots for u in clique.members)
    occ = clique_occupancy(clique, schedules, h)
    return Fraction(sum(1 for n in occ if n == 0), h)


def total_wakeups(schedules: Mapping[NodeId, WakeSchedule], slots: int) -> int:
    return sum(s.awake_count(slots) for s in schedules.values())


def mis_rotation_schedules(g: Graph, tau: float = 5.0, start_time: float = 0.0) -> dict:
    """Alternate the maximal independent sets of each component slot by slot."""
    out: dict = {}
    for comp in g.components():
        sets = sorted((tuple(sorted(s)) for s in maximal_independent_sets(g.subgraph(comp))))
        params = WakeParams(tau, len(sets), start_time)
        for u in comp:
            slots = frozenset(i for i, s in enumerate(sets) if u in s)
            out[u] = WakeSchedule(u, slots, params)
    return out


def always_awake_schedules(nodes: Iterable[NodeId], tau: float = 5.0, start_time: float = 0.0) -> dict:
    params = WakeParams(tau, 1, start_time)
    return {u: WakeSchedule(u, frozenset({0}), params) for u in nodes}


@dataclass(frozen=True)
class GroupEnergy:
    per_node_mj: Mapping[NodeId, Fraction]
    total_mj: Fraction
    awake_slots: int
    sleep_slots: int
    ledger: EnergyLedger


def simulate_group_energy(
    schedules: Iterable[WakeSchedule],
    horizon: float,
    power_awake=POWER_AWAKE_MW,
    power_sleep=POWER_SLEEP_MW,
) -> GroupEnergy:
    schedules = list(schedules)
    if not schedules:
        return GroupEnergy({}, Fraction(0), 0, 0, EnergyLedger())
    tau = as_fraction(schedules[0].params.tau)
    n_slots = as_fraction(horizon) / tau
    if n_slots.denominator != 1:
        raise ValueError(f"horizon {horizon} s is not a multiple of tau {float(tau)} s")
    ledger = EnergyLedger(tau, power_awake, power_sleep)
    for sched in sorted(schedules, key=lambda s: s.owner):
        for slot in range(int(n_slots)):
            ledger.record(sched.owner, sched.is_awake(slot))
    per_node = {u: e.mj for u, e in ledger.nodes.items()}
    return GroupEnergy(
        per_node,
        ledger.total_mj,
        ledger.total_awake_slots,
        ledger.total_slots - ledger.total_awake_slots,
        ledger,
    )
