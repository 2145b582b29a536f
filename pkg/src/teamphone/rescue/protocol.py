"""Self-rescue group protocol: neighbor discovery, theta flood, and the
schedule/position cascade, run as per-node state machines on the event kernel.

Timeline relative to the trigger time T (one round = 1 s by default):

* T        every node broadcasts a beacon (ranging happens on reception)
* T+1      every node broadcasts its neighbor set with its distance estimates
* T+2      one-hop network, cliques, gamma and theta; theta is flooded
* T+3      initiation: nodes outranking all their neighbors schedule
* T+5      schedules take effect; positions are finalized

A node schedules once all higher-ranked neighbors have been heard from. It
then broadcasts its schedule with its position knowledge, and if it was the
last of its neighborhood to schedule it also floods that knowledge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from ..graph import Graph, NodeId, OneHopNetwork, build_one_hop_network, edge_key, maximal_cliques
from ..positioning import (
    CoordinateAssignment,
    PathLossModel,
    estimate_distance,
    extend_positions,
    merge_assignments,
    seed_coordinate_system,
)
from ..sim.kernel import Kernel, to_us
from .scheduling import WakeParams, WakeSchedule, assign_schedule, compute_stats, hyperperiod, rank_key


class Phase(IntEnum):
    DISCOVERING = 0
    EXCHANGING_NEIGHBORS = 1
    FLOODING_THETA = 2
    AWAITING_SCHEDULES = 3
    SCHEDULED = 4


@dataclass(frozen=True)
class LastKnownLocation:
    lat: float | None = None
    lon: float | None = None
    fix_time: float | None = None
    accuracy: float | None = None


@dataclass
class ProtocolState:
    node: NodeId
    phase: Phase = Phase.DISCOVERING
    heard: dict = field(default_factory=dict)  # neighbor -> own directional estimate (m)
    neighbor_sets: dict = field(default_factory=dict)  # sender -> {neighbor: estimate}
    one_hop: OneHopNetwork | None = None
    gamma: Fraction | None = None
    theta: Fraction | None = None
    cliques: list = field(default_factory=list)
    received_thetas: dict = field(default_factory=dict)
    received_gammas: dict = field(default_factory=dict)
    locations: dict = field(default_factory=dict)
    received_schedules: dict = field(default_factory=dict)
    received_positions: list = field(default_factory=list)
    distances: dict = field(default_factory=dict)  # accumulated edge -> meters
    assignment: CoordinateAssignment | None = None
    schedule: WakeSchedule | None = None
    final: CoordinateAssignment | None = None
    trapped_at: float | None = None
    seen_floods: set = field(default_factory=set)
    schedule_sent: int = 0

    def advance(self, phase: Phase) -> None:
        if phase < self.phase:
            raise RuntimeError(f"{self.node!r}: phase cannot go back from {self.phase.name} to {phase.name}")
        self.phase = phase

    @property
    def group(self) -> list:
        return sorted(set(self.received_thetas) | {self.node})

    def rank_order(self) -> list:
        return sorted(self.group, key=lambda u: rank_key(self.received_thetas, u))


@dataclass(frozen=True)
class RescueConfig:
    round_s: float = 1.0
    latency_s: float = 0.02
    tau: float = 5.0
    radio_range: float = 100.0
    ranging: str = "exact"  # exact | rssi | replay
    pathloss: PathLossModel = PathLossModel()
    replay: Mapping = field(default_factory=dict)
    skew_ms: float = 50.0
    seed: int = 0

    @property
    def start_offset_s(self) -> float:
        return 5 * self.round_s


@dataclass(frozen=True)
class Message:
    kind: str  # beacon | neighbors | theta | schedule | positions
    category: str  # broadcast | flood
    origin: NodeId
    payload: Mapping
    msg_id: str


@dataclass
class RescueMedium:
    """Static rescue nodes on the kernel: broadcasts reach the current unit-disk neighbors."""

    kernel: Kernel
    graph: Graph
    positions: Mapping[NodeId, tuple]
    latency_us: int
    handlers: dict = field(default_factory=dict)
    sent: dict = field(default_factory=lambda: {"broadcast": 0, "flood": 0})

    def transmit(self, sender: NodeId, msg: Message) -> None:
        self.sent[msg.category] += 1
        self.kernel.emit("message-sent", node=sender, kind=msg.kind, category=msg.category, msg_id=msg.msg_id)
        for v in sorted(self.graph.neighbors(sender)):
            self.kernel.after(self.latency_us, "message-delivery", lambda v=v: self._deliver(sender, v, msg), v)

    def _deliver(self, sender, receiver, msg):
        self.kernel.emit("message-received", node=receiver, sender=sender, kind=msg.kind, msg_id=msg.msg_id)
        self.handlers[receiver](sender, msg)


def _skews(nodes, cfg: RescueConfig) -> dict:
    rng = np.random.default_rng([cfg.seed, 7])
    bound = cfg.skew_ms / 1000
    return {u: float(rng.uniform(-bound, bound)) for u in sorted(nodes)}


class RescueNode:
    def __init__(self, node, medium: RescueMedium, cfg: RescueConfig, trigger_s: float, skew_s: float,
                 location: LastKnownLocation | None):
        self.id = node
        self.medium = medium
        self.kernel = medium.kernel
        self.cfg = cfg
        self.trigger_s = trigger_s
        self.skew_s = skew_s
        self.state = ProtocolState(node, trapped_at=trigger_s)
        self.state.locations[node] = location or LastKnownLocation()
        medium.handlers[node] = self.receive

    # local clock helpers: a timer for nominal time t fires at t + skew
    def _timer(self, nominal_s: float, kind: str, fn: Callable) -> None:
        self.kernel.at(max(to_us(nominal_s + self.skew_s), self.kernel.now), kind, fn, self.id)

    def start(self) -> None:
        r = self.cfg.round_s
        self._timer(self.trigger_s, "timer", self.send_beacon)
        self._timer(self.trigger_s + r, "timer", self.send_neighbors)
        self._timer(self.trigger_s + 2 * r, "timer", self.flood_theta)
        self._timer(self.trigger_s + 3 * r, "timer", self.initiate)
        self._timer(self.trigger_s + self.cfg.start_offset_s, "timer", self.finalize)

    @property
    def start_time(self) -> float:
        return self.trigger_s + self.cfg.start_offset_s

    def _send(self, kind, category, payload, msg_id=None) -> Message:
        msg = Message(kind, category, self.id, payload, msg_id or f"{kind}:{self.id}")
        if category == "flood":
            self.state.seen_floods.add(msg.msg_id)
        self.medium.transmit(self.id, msg)
        return msg

    def send_beacon(self) -> None:
        self._send("beacon", "broadcast", {"tx_power_dbm": self.cfg.pathloss.tx_power_dbm})

    def _estimate(self, sender) -> float:
        d = math.dist(self.medium.positions[self.id], self.medium.positions[sender])
        mode = self.cfg.ranging
        if mode == "replay":
            val = self.cfg.replay.get(edge_key(self.id, sender))
            return float(val) if val is not None else d
        if mode == "rssi":
            return estimate_distance(d, [self.cfg.seed, _num(self.id), _num(sender)], self.cfg.pathloss)
        return d

    def send_neighbors(self) -> None:
        self.state.advance(Phase.EXCHANGING_NEIGHBORS)
        self.state.neighbor_sets[self.id] = dict(self.state.heard)
        self._send("neighbors", "broadcast", {"estimates": dict(sorted(self.state.heard.items()))})

    def flood_theta(self) -> None:
        st = self.state
        st.advance(Phase.FLOODING_THETA)
        sets = {u: set(e) for u, e in st.neighbor_sets.items()}
        net = build_one_hop_network(self.id, sets)
        dist = {}
        for u, v in net.graph.edges:
            a = st.neighbor_sets.get(u, {}).get(v)
            b = st.neighbor_sets.get(v, {}).get(u)
            vals = [x for x in (a, b) if x is not None]
            dist[(u, v)] = sum(vals) / len(vals)
        st.one_hop = net.with_distances(dist)
        st.distances.update(st.one_hop.edge_distances)
        st.cliques = sorted(c for c in maximal_cliques(net.graph) if self.id in c)
        stats = compute_stats(st.cliques)
        st.gamma, st.theta = stats.gamma[self.id], stats.theta[self.id]
        st.received_thetas[self.id] = st.theta
        st.received_gammas[self.id] = st.gamma
        self.kernel.emit("theta", node=self.id, theta=str(st.theta), gamma=str(st.gamma),
                         cliques=[list(c.key) for c in st.cliques])
        self._send("theta", "flood", {"theta": st.theta, "gamma": st.gamma, "location": st.locations[self.id]})

    def receive(self, sender, msg: Message) -> None:
        st = self.state
        if msg.category == "flood":
            if msg.msg_id in st.seen_floods:
                return
            st.seen_floods.add(msg.msg_id)
            # rebroadcast once, unchanged
            self.medium.transmit(self.id, msg)
        if msg.kind == "beacon":
            st.heard[sender] = self._estimate(sender)
        elif msg.kind == "neighbors":
            st.neighbor_sets[sender] = dict(msg.payload["estimates"])
        elif msg.kind == "theta":
            st.received_thetas[msg.origin] = msg.payload["theta"]
            st.received_gammas[msg.origin] = msg.payload["gamma"]
            st.locations[msg.origin] = msg.payload["location"]
        elif msg.kind in ("schedule", "positions"):
            self._absorb(msg.payload)
            if msg.kind == "schedule":
                st.received_schedules[msg.origin] = msg.payload["schedule"]
                self.try_schedule()
        if self.kernel.now >= to_us(self.start_time + self.skew_s) and msg.kind in ("schedule", "positions", "theta"):
            self.kernel.emit("protocol-violation", node=self.id, reason="late message", kind=msg.kind)

    def _absorb(self, payload) -> None:
        st = self.state
        st.distances.update(payload["distances"])
        frag = payload["assignment"]
        if frag is not None:
            st.received_positions.append(frag)
            st.assignment = frag if st.assignment is None else merge_assignments(st.assignment, frag).assignment

    # --- cascade --------------------------------------------------------

    def _higher_neighbors(self) -> list:
        st = self.state
        me = rank_key(st.received_thetas, self.id)
        return [v for v in st.one_hop.graph.neighbors(self.id) if rank_key(st.received_thetas, v) < me]

    def initiate(self) -> None:
        st = self.state
        st.advance(Phase.AWAITING_SCHEDULES)
        order = st.rank_order()
        if order[0] == self.id:
            self.kernel.emit("initiator", node=self.id, group=order)
        self.try_schedule()

    def try_schedule(self) -> None:
        st = self.state
        if st.phase != Phase.AWAITING_SCHEDULES or st.schedule is not None:
            return
        if any(v not in st.received_schedules for v in self._higher_neighbors()):
            return
        order = st.rank_order()
        rank = order.index(self.id)
        h = hyperperiod(st.received_gammas[u] for u in order)
        params = WakeParams(self.cfg.tau, h, self.start_time)
        st.schedule = assign_schedule(self.id, st.gamma, st.received_schedules, st.cliques, params)
        st.advance(Phase.SCHEDULED)
        self.kernel.emit("schedule-fixed", node=self.id, slots=sorted(st.schedule.awake_slots),
                         hyperperiod=h, gamma=str(st.gamma), rank=rank)
        if st.schedule.conflict_slots:
            self.kernel.emit("schedule-conflict", node=self.id, slots=sorted(st.schedule.conflict_slots))

        if rank == 0:
            st.assignment = seed_coordinate_system(st.one_hop, self.cfg.radio_range, rank=0)
        elif st.assignment is not None:
            st.assignment = extend_positions(st.assignment, st.one_hop, self.cfg.radio_range, rank=rank)
        if st.assignment is not None:
            for u in sorted(st.assignment.positions):
                if st.assignment.sources.get(u) == rank:
                    x, y = st.assignment.positions[u]
                    self.kernel.emit("position-computed", node=self.id, target=u, x=x, y=y)
        payload = {"schedule": st.schedule, "assignment": st.assignment, "distances": dict(st.distances)}
        st.schedule_sent += 1
        self._send("schedule", "broadcast", payload)
        lower = [v for v in st.one_hop.graph.neighbors(self.id) if v not in self._higher_neighbors()]
        if not lower and len(st.group) > 1:
            self._send("positions", "flood", payload, msg_id=f"positions:{self.id}")

    def finalize(self) -> None:
        st = self.state
        members = st.group
        edges = {e for e in st.distances if e[0] in members and e[1] in members}
        g = Graph(frozenset(members), frozenset(edges))
        base = st.assignment or CoordinateAssignment(None)
        st.final = extend_positions(base, (g, {e: st.distances[e] for e in edges}), self.cfg.radio_range,
                                    rank=len(members))
        for u in sorted(st.final.positions):
            x, y = st.final.positions[u]
            self.kernel.emit("position-fixed", node=self.id, target=u, x=x, y=y)
        for u in sorted(st.final.outliers):
            self.kernel.emit("position-fixed", node=self.id, target=u, outlier=True)


def _num(u) -> int:
    if isinstance(u, int):
        return u
    return int.from_bytes(str(u).encode()[:16].ljust(16, b"\0"), "big") % (2**63)


@dataclass
class RescueOutcome:
    nodes: dict
    schedules: dict
    assignments: dict
    sent: dict
    start_time: float

    def emergency_templates(self, clock=None) -> dict:
        from .emergency import compose_emergency_message

        return {u: compose_emergency_message(n.state, clock) for u, n in self.nodes.items()}


def run_rescue_protocol(
    group,
    kernel: Kernel,
    positions: Mapping[NodeId, tuple],
    cfg: RescueConfig = RescueConfig(),
    trigger_s: float = 0.0,
    locations: Mapping[NodeId, LastKnownLocation] | None = None,
    graph: Graph | None = None,
) -> RescueOutcome:
    """Run the protocol for ``group`` on ``kernel`` and return per-node results.

    ``graph`` defaults to the unit-disk graph over ``positions``.
    """
    launch = launch_rescue_protocol(group, kernel, positions, cfg, trigger_s, locations, graph)
    kernel.run(to_us(launch.start_time + 1.0))
    return launch.outcome()


@dataclass
class RescueLaunch:
    nodes: dict
    medium: RescueMedium
    start_time: float

    def outcome(self) -> RescueOutcome:
        schedules = {u: n.state.schedule for u, n in self.nodes.items()}
        assignments = {u: n.state.final for u, n in self.nodes.items()}
        return RescueOutcome(self.nodes, schedules, assignments, dict(self.medium.sent), self.start_time)


def launch_rescue_protocol(
    group,
    kernel: Kernel,
    positions: Mapping[NodeId, tuple],
    cfg: RescueConfig = RescueConfig(),
    trigger_s: float = 0.0,
    locations: Mapping[NodeId, LastKnownLocation] | None = None,
    graph: Graph | None = None,
) -> RescueLaunch:
    """Schedule the protocol's timers on ``kernel`` without running it."""
    from ..sim.radio import connectivity

    group = sorted(group)
    pos = {u: tuple(positions[u]) for u in group}
    if graph is None:
        graph = connectivity(pos, cfg.radio_range)
    medium = RescueMedium(kernel, graph.subgraph(group), pos, to_us(cfg.latency_s))
    skews = _skews(group, cfg)
    locations = locations or {}
    nodes = {u: RescueNode(u, medium, cfg, trigger_s, skews[u], locations.get(u)) for u in group}
    for u in group:
        nodes[u].start()
    return RescueLaunch(nodes, medium, trigger_s + cfg.start_offset_s)


@dataclass(frozen=True)
class Overhead:
    broadcasts: int
    theta_floods: int
    position_floods: int

    @property
    def floods(self) -> int:
        return self.theta_floods + self.position_floods

    @property
    def total(self) -> int:
        return self.broadcasts + self.floods


def position_flooders(topology: Graph) -> list:
    """Nodes that end up last in their neighborhood to schedule."""
    stats = compute_stats(maximal_cliques(topology))
    out = []
    for comp in topology.components():
        if len(comp) == 1:
            continue
        for u in sorted(comp):
            me = rank_key(stats.theta, u)
            if all(rank_key(stats.theta, v) < me for v in topology.neighbors(u)):
                out.append(u)
    return out


def count_overhead(n: int, topology: Graph) -> Overhead:
    """Closed-form transmission counts of one protocol run.

    Every node makes three broadcasts (beacon, neighbor set, schedule). A
    flood costs one transmission per member of the originator's component;
    every node floods theta and each position flooder floods once more.
    """
    if n < 1:
        raise ValueError("group size must be positive")
    if n != len(topology.nodes):
        raise ValueError(f"topology has {len(topology.nodes)} nodes, expected {n}")
    size = {u: len(c) for c in topology.components() for u in c}
    theta = sum(size[u] for u in topology.nodes)
    pos = sum(size[u] for u in position_flooders(topology))
    return Overhead(3 * n, theta, pos)
