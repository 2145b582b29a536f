"""Scenario files: YAML with explicit units, validated into a :class:`Scenario`.

Every physical quantity is written as ``"<number> <unit>"`` (``"100 m"``,
``"50 ms"``, ``"202.3 mW"``). Unknown keys are rejected. Errors carry the
line of the offending YAML node.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator

from ..rescue.protocol import LastKnownLocation
from ..sim.mobility import Trace, Waypoints
from ..sim.radio import CellularCoverage, Disc, LinkOutage, Obstacle, Polygon
from ..sim.scenario import (
    ExperimentSpec,
    MessageSpec,
    NodeSpec,
    RadioSpec,
    RescueSpec,
    RoutingSpec,
    Scenario,
    ScenarioError,
)

UNITS = {
    "length": {"m": 1.0, "km": 1000.0, "cm": 0.01},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "min": 60.0, "h": 3600.0},
    "power": {"mW": 1.0, "W": 1000.0},
    "energy": {"mJ": 1.0, "J": 1000.0},
    "speed": {"m/s": 1.0, "km/h": 1000.0 / 3600.0},
    "level": {"dB": 1.0},
}
BASE_UNIT = {"length": "m", "time": "s", "power": "mW", "energy": "mJ", "speed": "m/s", "level": "dB"}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]+)\s*$")


class ScenarioFileError(Exception):
    """Base for scenario-file problems; ``errors`` lists (location, line, message)."""

    def __init__(self, message: str, errors=()):
        super().__init__(message)
        self.errors = list(errors)


class ScenarioParseError(ScenarioFileError):
    pass


class ScenarioSchemaError(ScenarioFileError):
    pass


class UnitMismatchError(ScenarioSchemaError):
    pass


class _UnitProblem(ValueError):
    pass


def parse_quantity(value: Any, dimension: str) -> float:
    if isinstance(value, bool) or not isinstance(value, str):
        raise _UnitProblem(f"expected a {dimension} with a unit (e.g. '1 {BASE_UNIT[dimension]}'), got {value!r}")
    m = _QUANTITY.match(value)
    if not m:
        raise _UnitProblem(f"cannot read {value!r} as a {dimension}")
    number, unit = m.groups()
    table = UNITS[dimension]
    if unit not in table:
        raise _UnitProblem(f"unit {unit!r} is not a {dimension} unit (use one of {', '.join(table)})")
    return float(number) * table[unit]


def format_quantity(value: float, dimension: str) -> str:
    return f"{float(value)!r} {BASE_UNIT[dimension]}"


def _q(dimension):
    return BeforeValidator(lambda v: parse_quantity(v, dimension))


Length = Annotated[float, _q("length")]
Duration = Annotated[float, _q("time")]
Power = Annotated[float, _q("power")]
Energy = Annotated[float, _q("energy")]
Speed = Annotated[float, _q("speed")]
Level = Annotated[float, _q("level")]
Ident = Union[str, int]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DiscModel(_Model):
    center: tuple[Length, Length]
    radius: Length = Field(gt=0)


class CellularRegionModel(_Model):
    disc: Optional[DiscModel] = None
    polygon: Optional[list[tuple[Length, Length]]] = None

    @field_validator("polygon")
    @classmethod
    def _enough_vertices(cls, v):
        if v is not None and len(v) < 3:
            raise ValueError("a polygon needs at least 3 vertices")
        return v

    def build(self):
        if (self.disc is None) == (self.polygon is None):
            raise ValueError("give exactly one of disc or polygon")
        if self.disc is not None:
            return Disc(tuple(self.disc.center), self.disc.radius)
        return Polygon(tuple(tuple(p) for p in self.polygon))


class ObstacleModel(_Model):
    start: tuple[Length, Length] = Field(alias="from")
    end: tuple[Length, Length] = Field(alias="to")


class OutageModel(_Model):
    between: tuple[Ident, Ident]
    start: Duration = Field(ge=0)
    end: Duration


class RadioModelFile(_Model):
    hop_latency: Duration = Field(default=0.02, ge=0)
    cellular_latency: Duration = Field(default=0.05, ge=0)
    obstacles: list[ObstacleModel] = []
    outages: list[OutageModel] = []
    cellular: list[CellularRegionModel] = []


class ReplayModel(_Model):
    pair: tuple[Ident, Ident]
    distance: Length = Field(gt=0)


class RescueModelFile(_Model):
    trigger: Duration = Field(default=0.0, ge=0)
    tau: Duration = Field(default=5.0, gt=0)
    round: Duration = Field(default=1.0, gt=0)
    power_awake: Power = Field(default=202.30, gt=0)
    power_sleep: Power = Field(default=12.98, ge=0)
    schedule_policy: Literal["clique", "mis", "awake"] = "clique"
    ranging: Literal["exact", "rssi", "replay"] = "exact"
    replay: list[ReplayModel] = []
    skew: Duration = Field(default=0.05, ge=0)
    pathloss_exponent: float = Field(default=3.0, gt=0)
    shadowing: Level = Field(default=2.0, ge=0)
    hello: bool = True


class RoutingModelFile(_Model):
    policy: Literal["full", "adhoc-only", "static", "flood"] = "full"
    general_mode: Literal["static", "flood"] = "static"
    delivered_notice: bool = True
    hello_interval: Duration = Field(default=1.0, gt=0)
    hellos_to_neighbor: int = Field(default=3, ge=1)
    allowed_hello_loss: int = Field(default=2, ge=1)
    rreq_timeout: Duration = Field(default=4.0, gt=0)
    rreq_retries: int = Field(default=2, ge=0)
    rrep_ack_timeout: Duration = Field(default=0.05, gt=0)
    active_route_timeout: Duration = Field(default=10.0, gt=0)
    cc_poll_interval: Duration = Field(default=10.0, gt=0)


class ExperimentModelFile(_Model):
    horizon: Duration = Field(default=60.0, ge=0)
    mobility_step: Duration = Field(default=0.1, gt=0)
    coverage_samples: int = Field(default=0, ge=0)
    metrics: list[Literal["messages", "energy", "overhead", "routing", "rescue", "coverage", "battery"]] = []
    events_file: str = "events.jsonl"
    metrics_file: str = "metrics.json"


class WaypointModel(_Model):
    waypoints: list[tuple[Length, Length]] = Field(min_length=1)
    speed: Speed = Field(ge=0)
    depart: Duration = Field(default=0.0, ge=0)
    loop: bool = False


class TraceModel(_Model):
    trace: list[tuple[Duration, Length, Length]] = Field(min_length=1)


class LocationModel(_Model):
    lat: Optional[float] = None
    lon: Optional[float] = None
    fix_time: Optional[Duration] = None
    accuracy: Optional[Length] = None


class NodeModel(_Model):
    id: Ident
    role: Literal["messaging", "self-rescue", "command-center"]
    position: tuple[Length, Length]
    range: Length = Field(default=100.0, gt=0)
    cellular: Literal["auto", "on", "off"] = "auto"
    battery: Optional[Energy] = Field(default=None, gt=0)
    mobility: Optional[Union[WaypointModel, TraceModel]] = None
    location: Optional[LocationModel] = None


class MessageModel(_Model):
    id: str
    source: Ident
    destination: Optional[Ident] = None
    kind: Literal["general", "emergency"] = "general"
    at: Duration = Field(ge=0)
    payload: int = Field(default=256, ge=0, description="bytes")


class ScenarioModelFile(_Model):
    name: str = "scenario"
    seed: int = 0
    experiment: ExperimentModelFile = ExperimentModelFile()
    radio: RadioModelFile = RadioModelFile()
    rescue: RescueModelFile = RescueModelFile()
    routing: RoutingModelFile = RoutingModelFile()
    nodes: list[NodeModel] = []
    messages: list[MessageModel] = []


# ---------------------------------------------------------------------------
# model <-> Scenario


def _to_scenario(m: ScenarioModelFile) -> Scenario:
    nodes = []
    for n in m.nodes:
        mob = None
        if isinstance(n.mobility, WaypointModel):
            mob = Waypoints(tuple(tuple(p) for p in n.mobility.waypoints), n.mobility.speed, n.mobility.loop,
                            n.mobility.depart)
        elif isinstance(n.mobility, TraceModel):
            mob = Trace(tuple(tuple(r) for r in n.mobility.trace))
        loc = None
        if n.location is not None:
            loc = LastKnownLocation(n.location.lat, n.location.lon, n.location.fix_time, n.location.accuracy)
        cell = {"auto": None, "on": True, "off": False}[n.cellular]
        nodes.append(NodeSpec(n.id, n.role, tuple(n.position), n.range, mob, cell, loc, n.battery))
    regions = tuple(r.build() for r in m.radio.cellular)
    radio = RadioSpec(
        m.radio.hop_latency,
        m.radio.cellular_latency,
        tuple(Obstacle(tuple(o.start), tuple(o.end)) for o in m.radio.obstacles),
        tuple(LinkOutage(o.between[0], o.between[1], o.start, o.end) for o in m.radio.outages),
        CellularCoverage(regions),
    )
    r = m.rescue
    rescue = RescueSpec(r.trigger, r.tau, r.round, r.power_awake, r.power_sleep, r.schedule_policy, r.ranging,
                        {tuple(p.pair): p.distance for p in r.replay}, r.skew * 1000.0, r.pathloss_exponent,
                        r.shadowing, r.hello)
    routing = RoutingSpec(**m.routing.model_dump())
    e = m.experiment
    experiment = ExperimentSpec(e.horizon, e.mobility_step, e.coverage_samples, tuple(e.metrics), e.events_file,
                                e.metrics_file)
    messages = tuple(MessageSpec(x.id, x.source, x.at, x.destination, x.kind, x.payload) for x in m.messages)
    return Scenario(m.name, m.seed, tuple(nodes), messages, radio, rescue, routing, experiment)


def to_document(s: Scenario) -> dict:
    """Plain-data form of ``s`` in base units; ``load_scenario_text`` inverts it."""
    L = lambda x: format_quantity(x, "length")  # noqa: E731
    T = lambda x: format_quantity(x, "time")  # noqa: E731
    nodes = []
    for n in s.nodes:
        d: dict = {"id": n.id, "role": n.role, "position": [L(c) for c in n.position], "range": L(n.radio_range)}
        d["cellular"] = {None: "auto", True: "on", False: "off"}[n.cellular]
        if n.battery_mj is not None:
            d["battery"] = format_quantity(n.battery_mj, "energy")
        if isinstance(n.mobility, Waypoints):
            d["mobility"] = {
                "waypoints": [[L(x), L(y)] for x, y in n.mobility.points],
                "speed": format_quantity(n.mobility.speed, "speed"),
                "depart": T(n.mobility.depart),
                "loop": n.mobility.loop,
            }
        elif isinstance(n.mobility, Trace):
            d["mobility"] = {"trace": [[T(t), L(x), L(y)] for t, x, y in n.mobility.rows]}
        elif n.mobility is not None:
            raise ScenarioError(f"node {n.id}: cannot serialize mobility {type(n.mobility).__name__}")
        if n.location is not None:
            loc = n.location
            d["location"] = {
                "lat": loc.lat,
                "lon": loc.lon,
                "fix_time": None if loc.fix_time is None else T(loc.fix_time),
                "accuracy": None if loc.accuracy is None else L(loc.accuracy),
            }
        nodes.append(d)
    regions = []
    for reg in s.radio.coverage.regions:
        if isinstance(reg, Disc):
            regions.append({"disc": {"center": [L(c) for c in reg.center], "radius": L(reg.radius)}})
        else:
            regions.append({"polygon": [[L(x), L(y)] for x, y in reg.vertices]})
    r = s.rescue
    rt = s.routing
    e = s.experiment
    return {
        "name": s.name,
        "seed": s.seed,
        "experiment": {
            "horizon": T(e.horizon),
            "mobility_step": T(e.mobility_step),
            "coverage_samples": e.coverage_samples,
            "metrics": list(e.metrics),
            "events_file": e.events_file,
            "metrics_file": e.metrics_file,
        },
        "radio": {
            "hop_latency": T(s.radio.hop_latency),
            "cellular_latency": T(s.radio.cellular_latency),
            "obstacles": [{"from": [L(c) for c in o.a], "to": [L(c) for c in o.b]} for o in s.radio.obstacles],
            "outages": [{"between": [o.u, o.v], "start": T(o.start), "end": T(o.end)} for o in s.radio.outages],
            "cellular": regions,
        },
        "rescue": {
            "trigger": T(r.trigger),
            "tau": T(r.tau),
            "round": T(r.round),
            "power_awake": format_quantity(r.power_awake_mw, "power"),
            "power_sleep": format_quantity(r.power_sleep_mw, "power"),
            "schedule_policy": r.schedule_policy,
            "ranging": r.ranging,
            "replay": [{"pair": list(k), "distance": L(v)} for k, v in r.replay.items()],
            "skew": T(r.skew_ms / 1000.0),
            "pathloss_exponent": r.pathloss_exponent,
            "shadowing": format_quantity(r.shadowing_db, "level"),
            "hello": r.hello,
        },
        "routing": {
            "policy": rt.policy,
            "general_mode": rt.general_mode,
            "delivered_notice": rt.delivered_notice,
            "hello_interval": T(rt.hello_interval),
            "hellos_to_neighbor": rt.hellos_to_neighbor,
            "allowed_hello_loss": rt.allowed_hello_loss,
            "rreq_timeout": T(rt.rreq_timeout),
            "rreq_retries": rt.rreq_retries,
            "rrep_ack_timeout": T(rt.rrep_ack_timeout),
            "active_route_timeout": T(rt.active_route_timeout),
            "cc_poll_interval": T(rt.cc_poll_interval),
        },
        "nodes": nodes,
        "messages": [
            {"id": m.id, "source": m.source, "destination": m.destination, "kind": m.kind, "at": T(m.at),
             "payload": m.payload_bytes}
            for m in s.messages
        ],
    }


def serialize(s: Scenario) -> str:
    return yaml.safe_dump(to_document(s), sort_keys=False, default_flow_style=None, width=100)


# ---------------------------------------------------------------------------
# loading


def _node_at(root, loc):
    """YAML node reached by following a pydantic error location."""
    node = root
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int):
            if key >= len(node.value):
                return node
            node = node.value[key]
        else:
            return node
    return node


def _clean_loc(loc) -> tuple:
    # drop union-branch tags such as 'WaypointModel' that are not document keys
    return tuple(k for k in loc if isinstance(k, int) or not k[:1].isupper() and "[" not in k)


def load_scenario_text(text: str, source: str = "<string>") -> Scenario:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioParseError(f"{source}:{line}: {exc}", [((), line, str(exc))]) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioSchemaError(f"{source}: top level must be a mapping", [((), 1, "top level must be a mapping")])
    try:
        model = ScenarioModelFile.model_validate(data)
    except ValidationError as exc:
        errors, unit_only = [], True
        for err in exc.errors():
            loc = _clean_loc(err["loc"])
            node = _node_at(root, loc) if root is not None else None
            line = node.start_mark.line + 1 if node is not None else None
            cause = (err.get("ctx") or {}).get("error")
            unit_only &= isinstance(cause, _UnitProblem)
            msg = str(cause) if cause is not None else err["msg"]
            errors.append((".".join(map(str, loc)), line, msg))
        kind = UnitMismatchError if unit_only else ScenarioSchemaError
        text_ = "\n".join(f"{source}:{line}: {where}: {msg}" for where, line, msg in errors)
        raise kind(text_, errors) from None
    try:
        return _to_scenario(model)
    except (ScenarioError, ValueError) as exc:
        raise ScenarioSchemaError(f"{source}: {exc}", [((), None, str(exc))]) from None


def load_scenario(path) -> Scenario:
    p = Path(path)
    return load_scenario_text(p.read_text(), str(p))
