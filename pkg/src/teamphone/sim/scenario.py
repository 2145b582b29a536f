"""In-memory scenario: who is where, how they move, what they send, and run settings.

All quantities are SI base units here (meters, seconds, milliwatts); the
scenario file layer converts from whatever units the author wrote.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from ..graph import NodeId, edge_key
from ..rescue.protocol import LastKnownLocation
from .mobility import Static, Trace, Waypoints
from .radio import CellularCoverage, LinkOutage, Obstacle

ROLES = ("messaging", "self-rescue", "command-center")
SCHEDULE_POLICIES = ("clique", "mis", "awake")
ROUTING_POLICIES = ("full", "adhoc-only", "static", "flood")
RANGING_MODES = ("exact", "rssi", "replay")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    id: NodeId
    role: str
    position: tuple
    radio_range: float = 100.0
    mobility: Static | Waypoints | Trace | None = None  # None: stays at ``position``
    cellular: bool | None = None  # forced on/off; None follows the coverage regions
    location: LastKnownLocation | None = None
    battery_mj: float | None = None

    @property
    def motion(self):
        return self.mobility if self.mobility is not None else Static(tuple(self.position))


@dataclass(frozen=True)
class MessageSpec:
    id: str
    source: NodeId
    at: float
    destination: NodeId | None = None  # None for emergencies: the command center
    kind: str = "general"
    payload_bytes: int = 256


@dataclass(frozen=True)
class RadioSpec:
    hop_latency: float = 0.02
    cellular_latency: float = 0.05
    obstacles: tuple = ()  # Obstacle
    outages: tuple = ()  # LinkOutage
    coverage: CellularCoverage = field(default_factory=CellularCoverage)


@dataclass(frozen=True)
class RescueSpec:
    trigger: float = 0.0
    tau: float = 5.0
    round: float = 1.0
    power_awake_mw: float = 202.30
    power_sleep_mw: float = 12.98
    schedule_policy: str = "clique"
    ranging: str = "exact"
    replay: Mapping = field(default_factory=dict)  # (u, v) -> meters
    skew_ms: float = 50.0
    pathloss_exponent: float = 3.0
    shadowing_db: float = 2.0
    hello: bool = True  # awake rescue nodes announce themselves to passing messaging nodes


@dataclass(frozen=True)
class RoutingSpec:
    policy: str = "full"
    general_mode: str = "static"
    delivered_notice: bool = True
    hello_interval: float = 1.0
    hellos_to_neighbor: int = 3
    allowed_hello_loss: int = 2
    rreq_timeout: float = 4.0
    rreq_retries: int = 2
    rrep_ack_timeout: float = 0.05
    active_route_timeout: float = 10.0
    cc_poll_interval: float = 10.0


@dataclass(frozen=True)
class ExperimentSpec:
    horizon: float = 60.0
    mobility_step: float = 0.1
    coverage_samples: int = 0  # 0 skips the Monte Carlo coverage metric
    metrics: tuple = ()  # empty: emit everything
    events_file: str = "events.jsonl"
    metrics_file: str = "metrics.json"


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 0
    nodes: tuple = ()
    messages: tuple = ()
    radio: RadioSpec = field(default_factory=RadioSpec)
    rescue: RescueSpec = field(default_factory=RescueSpec)
    routing: RoutingSpec = field(default_factory=RoutingSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)

    def __post_init__(self):
        validate(self)

    def node(self, u: NodeId) -> NodeSpec:
        for n in self.nodes:
            if n.id == u:
                return n
        raise KeyError(u)

    def ids(self, role: str | None = None) -> list:
        return sorted(n.id for n in self.nodes if role is None or n.role == role)

    @property
    def command_center(self) -> NodeId | None:
        cc = self.ids("command-center")
        return cc[0] if cc else None


def validate(s: Scenario) -> None:
    ids = [n.id for n in s.nodes]
    if len(set(ids)) != len(ids):
        dup = sorted({u for u in ids if ids.count(u) > 1})
        raise ScenarioError(f"duplicate node ids: {dup}")
    for n in s.nodes:
        if n.role not in ROLES:
            raise ScenarioError(f"node {n.id}: unknown role {n.role!r}")
        if not n.radio_range > 0:
            raise ScenarioError(f"node {n.id}: radio range must be positive")
        if n.battery_mj is not None and not n.battery_mj > 0:
            raise ScenarioError(f"node {n.id}: battery capacity must be positive")
        if n.role == "command-center" and n.cellular is False:
            raise ScenarioError(f"node {n.id}: the command center is always cellular-reachable")
    if len(s.ids("command-center")) > 1:
        raise ScenarioError("at most one command center")
    known = set(ids)
    for m in s.messages:
        if m.kind not in ("general", "emergency"):
            raise ScenarioError(f"message {m.id}: unknown kind {m.kind!r}")
        if m.source not in known:
            raise ScenarioError(f"message {m.id}: unknown source {m.source!r}")
        if s.node(m.source).role == "self-rescue":
            raise ScenarioError(f"message {m.id}: self-rescue nodes do not originate routed messages")
        dest = m.destination if m.destination is not None else s.command_center
        if dest is None:
            raise ScenarioError(f"message {m.id}: no destination and no command center")
        if dest not in known:
            raise ScenarioError(f"message {m.id}: unknown destination {dest!r}")
        if m.at < 0:
            raise ScenarioError(f"message {m.id}: negative send time")
    if len({m.id for m in s.messages}) != len(s.messages):
        raise ScenarioError("duplicate message ids")
    for o in s.radio.outages:
        if o.u not in known or o.v not in known:
            raise ScenarioError(f"outage names unknown node: {o.u}-{o.v}")
    if s.rescue.schedule_policy not in SCHEDULE_POLICIES:
        raise ScenarioError(f"unknown schedule policy {s.rescue.schedule_policy!r}")
    if s.rescue.ranging not in RANGING_MODES:
        raise ScenarioError(f"unknown ranging mode {s.rescue.ranging!r}")
    if s.routing.policy not in ROUTING_POLICIES:
        raise ScenarioError(f"unknown routing policy {s.routing.policy!r}")
    if s.routing.general_mode not in ("static", "flood"):
        raise ScenarioError(f"unknown opportunistic mode {s.routing.general_mode!r}")
    if s.rescue.tau <= 0 or s.rescue.round <= 0:
        raise ScenarioError("tau and round must be positive")
    if s.experiment.horizon < 0 or s.experiment.mobility_step <= 0:
        raise ScenarioError("horizon must be non-negative and the mobility step positive")
    if 0 < s.experiment.coverage_samples < 100_000:
        raise ScenarioError("coverage needs at least 100000 samples")


def replay_table(pairs: Mapping) -> dict:
    return {edge_key(*k): float(v) for k, v in pairs.items()}


__all__ = [
    "ExperimentSpec",
    "LinkOutage",
    "MessageSpec",
    "NodeSpec",
    "Obstacle",
    "RadioSpec",
    "RescueSpec",
    "RoutingSpec",
    "Scenario",
    "ScenarioError",
    "validate",
]
