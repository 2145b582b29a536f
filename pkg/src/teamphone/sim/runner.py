"""Run a scenario on the event kernel and derive its metrics from the event log."""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from ..graph import edge_key
from ..positioning import PathLossModel
from ..rescue.emergency import compose_emergency_message
from ..rescue.protocol import RescueConfig, launch_rescue_protocol
from ..rescue.scheduling import always_awake_schedules, mis_rotation_schedules
from ..routing.aodv import AodvParams
from ..routing.messaging import DataMessage, MessagingNode
from .energy import EnergyLedger, as_fraction
from .kernel import Kernel, KernelError, to_s, to_us
from .radio import RadioModel
from .scenario import Scenario


@dataclass
class RunResult:
    scenario: Scenario
    kernel: Kernel
    metrics: dict
    rescue: object | None  # RescueOutcome
    schedules: dict
    agents: dict
    energy: EnergyLedger

    @property
    def log(self):
        return self.kernel.log


class Network:
    """The facade messaging nodes see: time, links, latencies and logging."""

    def __init__(self, scenario: Scenario, kernel: Kernel, radio: RadioModel, policy: str):
        self.s = scenario
        self.kernel = kernel
        self.radio = radio
        self.policy = policy
        self.general_mode = scenario.routing.general_mode
        self.delivered_notice = scenario.routing.delivered_notice
        self.cc = scenario.command_center
        self.agents: dict = {}
        self.hop_us = to_us(scenario.radio.hop_latency)
        self.cell_us = to_us(scenario.radio.cellular_latency)
        self.confirm_us = max(to_us(scenario.routing.rrep_ack_timeout), self.hop_us)
        self.inflight: dict = {}
        self.deliveries: dict = {}
        self.emergency_source = None  # callback: rescue node -> (msg id, payload bytes)

    # clock and log
    @property
    def now_us(self) -> int:
        return self.kernel.now

    @property
    def now(self) -> float:
        return to_s(self.kernel.now)

    def emit(self, event: str, /, **fields) -> None:
        self.kernel.emit(event, **fields)

    def after(self, delay_s: float, fn, kind: str = "timer") -> None:
        self.kernel.after(to_us(delay_s), kind, fn)

    def agent(self, u) -> MessagingNode:
        return self.agents[u]

    # interfaces
    def cellular(self, u) -> bool:
        return self.cellular_at(u, self.now)

    def cellular_at(self, u, t: float) -> bool:
        forced = self.s.node(u).cellular
        if forced is not None:
            return forced
        return self.radio.cellular(u, t)

    def cellular_reachable(self, u) -> bool:
        return u in self.agents and self.cellular(u)

    def linked(self, u, v, t_us=None) -> bool:
        t = self.now if t_us is None else to_s(t_us)
        return self.radio.linked(u, v, t)

    def _track(self, msg_id, delta):
        if msg_id is not None:
            self.inflight[msg_id] = self.inflight.get(msg_id, 0) + delta

    def broadcast_hello(self, u, role, gateway) -> None:
        for v in sorted(self.agents):
            if v != u and self.linked(u, v):
                self.kernel.after(self.hop_us, "message-delivery",
                                  lambda v=v: self.linked(u, v) and self.agents[v].process_hello(u, role, gateway), v)

    def send_control(self, u, v, deliver) -> None:
        a, b = self.agents[u], self.agents.get(v)
        if b is None or not (a.is_neighbor(v) and b.is_neighbor(u) and self.linked(u, v)):
            self.emit("control-drop", node=u, peer=v)
            return

        def arrive():
            if self.linked(u, v):
                deliver()
            else:
                self.emit("control-drop", node=u, peer=v)

        self.kernel.after(self.hop_us, "message-delivery", arrive, v)

    def broadcast_control(self, u, deliver_to, exclude=None) -> None:
        for v in self.agents[u].neighbors.established():
            if v != exclude:
                self.send_control(u, v, lambda v=v: deliver_to(v))

    def send_data(self, u, v, arrived, failed, msg_id=None) -> None:
        """Unicast over one ad-hoc hop; the link must hold at send and at arrival."""
        self._track(msg_id, 1)
        ok = v in self.agents and self.agents[u].is_neighbor(v) and self.linked(u, v)

        def arrive():
            if ok and self.linked(u, v):
                self._track(msg_id, -1)
                arrived()
            else:
                self.kernel.after(self.confirm_us - self.hop_us, "timer", fail)

        def fail():
            self._track(msg_id, -1)
            failed()

        self.kernel.after(self.hop_us, "message-delivery", arrive, v)

    def send_cellular(self, u, v, arrived, failed, msg_id=None) -> None:
        self._track(msg_id, 1)
        ok = self.cellular(u)

        def arrive():
            self._track(msg_id, -1)
            if ok and self.cellular(v):
                arrived()
            else:
                failed()

        self.kernel.after(self.cell_us, "message-delivery", arrive, v)

    def poke(self, dest) -> None:
        if dest in self.agents and self.cellular(dest):
            self.agents[dest].poll_command_center()

    def delivered(self, msg: DataMessage) -> None:
        self.deliveries.setdefault(msg.id, self.now_us)

    def request_emergency(self, rescue_node, messaging_node) -> None:
        if self.emergency_source is None or self.cc is None:
            return
        got = self.emergency_source(rescue_node)
        if got is None:
            return
        msg_id, size, created = got
        a = self.agents[messaging_node]
        if msg_id in a.store.seen:
            return
        a.originate(DataMessage(msg_id, messaging_node, self.cc, "emergency", size, created))


def _schedule_override(policy, launch, graph, tau):
    """Swap protocol schedules for a baseline, keeping the protocol's start time."""
    if policy == "clique":
        return None
    start = launch.start_time
    if policy == "mis":
        return mis_rotation_schedules(graph, tau, start)
    return always_awake_schedules(graph.nodes, tau, start)


def run(
    scenario: Scenario,
    seed: int | None = None,
    horizon: float | None = None,
    policy: str | None = None,
    coverage_samples: int | None = None,
) -> RunResult:
    s = scenario
    if seed is not None:
        s = replace(s, seed=seed)
    if horizon is not None:
        s = replace(s, experiment=replace(s.experiment, horizon=float(horizon)))
    if policy is not None:
        s = replace(s, routing=replace(s.routing, policy=policy))
    if coverage_samples is not None:
        s = replace(s, experiment=replace(s.experiment, coverage_samples=int(coverage_samples)))

    horizon_us = to_us(s.experiment.horizon)
    kernel = Kernel(horizon_us)
    rng = np.random.default_rng([s.seed, 11])
    mobility = {n.id: n.motion for n in s.nodes}
    radio = RadioModel(mobility, {n.id: n.radio_range for n in s.nodes}, s.radio.obstacles, s.radio.outages,
                       s.radio.coverage, {n.id: n.role for n in s.nodes})
    net = Network(s, kernel, radio, s.routing.policy)
    params = AodvParams(s.routing.hello_interval, s.routing.hellos_to_neighbor, s.routing.allowed_hello_loss,
                        s.routing.rreq_timeout, s.routing.rreq_retries, s.routing.rrep_ack_timeout,
                        s.routing.active_route_timeout)
    messaging = [u for u in s.ids() if s.node(u).role != "self-rescue"]
    for u in messaging:
        net.agents[u] = MessagingNode(u, net, s.node(u).role, params)

    ledger = EnergyLedger(as_fraction(s.rescue.tau), as_fraction(s.rescue.power_awake_mw),
                          as_fraction(s.rescue.power_sleep_mw))
    state = {"schedules": {}, "launch": None}
    rescue_ids = s.ids("self-rescue")

    # self-rescue group
    if rescue_ids:
        r = s.rescue
        t0 = r.trigger
        positions = {u: radio.position(u, t0) for u in rescue_ids}
        rgraph = radio.graph(t0, among=rescue_ids)
        cfg = RescueConfig(r.round, s.radio.hop_latency, r.tau, min(s.node(u).radio_range for u in rescue_ids),
                           r.ranging, PathLossModel(exponent=r.pathloss_exponent, sigma_db=r.shadowing_db),
                           {edge_key(*k): v for k, v in r.replay.items()}, r.skew_ms, s.seed)
        locations = {u: s.node(u).location for u in rescue_ids if s.node(u).location is not None}
        launch = launch_rescue_protocol(rescue_ids, kernel, positions, cfg, t0, locations, rgraph)
        state["launch"] = launch
        start_us = to_us(launch.start_time)
        tau_us = to_us(r.tau)

        def slot(k: int) -> None:
            if k == 0:
                override = _schedule_override(r.schedule_policy, launch, rgraph, r.tau)
                scheds = override or {u: launch.nodes[u].state.schedule for u in rescue_ids}
                for u in rescue_ids:
                    if scheds.get(u) is None:
                        raise KernelError(f"node {u} has no schedule at the start time")
                state["schedules"] = scheds
                if override:
                    for u in rescue_ids:
                        kernel.emit("schedule-override", node=u, policy=r.schedule_policy,
                                    slots=sorted(scheds[u].awake_slots),
                                    hyperperiod=scheds[u].params.hyperperiod_slots)
            scheds = state["schedules"]
            for u in rescue_ids:
                awake = scheds[u].is_awake(k)
                ledger.record(u, awake)
                kernel.emit("slot-awake" if awake else "slot-asleep", node=u, slot=k)
                if awake and r.hello:
                    for j in range(max(1, int(r.tau // r.round))):
                        kernel.after(to_us(j * r.round), "timer", lambda u=u: rescue_hello(u))
            nxt = start_us + (k + 1) * tau_us
            if nxt + tau_us <= horizon_us:
                kernel.at(nxt, "timer", lambda: slot(k + 1))

        def rescue_hello(u) -> None:
            for v in sorted(net.agents):
                if radio.linked(u, v, net.now):
                    kernel.after(net.hop_us, "message-delivery",
                                 lambda v=v: net.agents[v].process_hello(u, "self-rescue"), v)

        if start_us + tau_us <= horizon_us:
            kernel.at(start_us, "timer", lambda: slot(0))

        emergency_cache: dict = {}

        def emergency_source(u):
            comp = next(c for c in rgraph.components() if u in c)
            key = min(comp)
            if key not in emergency_cache:
                st = launch.nodes[u].state
                if st.final is None:
                    return None
                em = compose_emergency_message(st)
                size = 64 + 48 * em.group_size
                emergency_cache[key] = (f"emergency-{key}", size, net.now)
                kernel.emit("emergency-composed", node=u, msg_id=f"emergency-{key}", message=em.to_dict())
            return emergency_cache[key]

        net.emergency_source = emergency_source

    # hellos, cellular polling
    hello_us = to_us(s.routing.hello_interval)
    phases = {u: int(rng.integers(0, hello_us)) for u in messaging}

    def hello(u):
        net.agents[u].hello_tick()
        if kernel.now + hello_us <= horizon_us:
            kernel.after(hello_us, "timer", lambda: hello(u), u)

    poll_us = to_us(s.routing.cc_poll_interval)

    def poll(u):
        net.agents[u].poll_command_center()
        if kernel.now + poll_us <= horizon_us:
            kernel.after(poll_us, "timer", lambda: poll(u), u)

    for u in messaging:
        kernel.at(phases[u], "timer", lambda u=u: hello(u), u)
        if s.command_center is not None and u != s.command_center:
            kernel.at(phases[u] + poll_us, "timer", lambda u=u: poll(u), u)

    # link and cellular changes located exactly between mobility steps
    changing = any(getattr(m, "moving", False) for m in mobility.values()) or bool(s.radio.outages)
    pairs = list(combinations(s.ids(), 2))
    step_us = to_us(s.experiment.mobility_step)

    def link_state(t_us):
        t = to_s(t_us)
        return {p: radio.linked(*p, t) for p in pairs}, {u: net.cellular_at(u, t) for u in messaging}

    def first_flip(lo, hi, probe):
        # smallest microsecond in (lo, hi] where probe differs from its value at lo
        before = probe(lo)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if probe(mid) == before:
                lo = mid
            else:
                hi = mid
        return hi

    def step(t_us):
        end = min(t_us + step_us, horizon_us)
        links0, cell0 = link_state(t_us)
        links1, cell1 = link_state(end)
        changes = []
        for p in pairs:
            if links0[p] != links1[p]:
                at = first_flip(t_us, end, lambda x, p=p: radio.linked(*p, to_s(x)))
                changes.append((at, 0, p, links1[p]))
        for u in messaging:
            if cell0[u] != cell1[u]:
                at = first_flip(t_us, end, lambda x, u=u: net.cellular_at(u, to_s(x)))
                changes.append((at, 1, u, cell1[u]))
        for at, what, who, up in sorted(changes, key=lambda c: (c[0], c[1], str(c[2]))):
            if what == 0:
                kernel.at(at, "contact-change", lambda who=who, up=up: kernel.emit(
                    "link-up" if up else "link-down", node=who[0], peer=who[1]))
            else:
                kernel.at(at, "contact-change", lambda who=who, up=up: cellular_flip(who, up))
        if end < horizon_us:
            kernel.at(end, "mobility-step", lambda: step(end))

    def cellular_flip(u, up):
        kernel.emit("cellular-on" if up else "cellular-off", node=u)
        net.agents[u].cellular_changed()

    if changing and horizon_us > 0:
        kernel.at(0, "mobility-step", lambda: step(0))

    # traffic
    for m in sorted(s.messages, key=lambda m: (m.at, m.id)):
        dest = m.destination if m.destination is not None else s.command_center
        msg = DataMessage(m.id, m.source, dest, m.kind, m.payload_bytes, m.at)
        kernel.at(to_us(m.at), "timer", lambda msg=msg: net.agents[msg.source].originate(msg), m.source)

    kernel.run(horizon_us)
    _final_records(kernel, net)

    launch = state["launch"]
    outcome = launch.outcome() if launch is not None else None
    result = RunResult(s, kernel, {}, outcome, state["schedules"], net.agents, ledger)
    from .metrics import compute_metrics

    result.metrics = compute_metrics(kernel.log.records, s)
    return result


def _final_records(kernel: Kernel, net: Network) -> None:
    ids = sorted({r["msg_id"] for r in kernel.log.of("originate")})
    cc = net.agents.get(net.cc) if net.cc is not None else None
    for mid in ids:
        holders = [u for u in sorted(net.agents) if net.agents[u].holds(mid)]
        kernel.emit(
            "message-final",
            msg_id=mid,
            delivered=mid in net.deliveries,
            holders=holders,
            at_cc=bool(cc is not None and cc.mailbox.holds(mid)),
            in_flight=net.inflight.get(mid, 0),
        )
