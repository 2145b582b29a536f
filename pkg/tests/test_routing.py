import random
from dataclasses import replace

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from teamphone.routing.aodv import AodvParams, Discovery, NeighborTable, RouteReply, RouteRequest, RouteTable
from teamphone.routing.messaging import CommandCenterMailbox, DataMessage
from teamphone.sim.mobility import Waypoints
from teamphone.sim.radio import CellularCoverage, Disc
from teamphone.sim.runner import run
from teamphone.sim.scenario import (
    ExperimentSpec,
    MessageSpec,
    NodeSpec,
    RadioSpec,
    RoutingSpec,
    Scenario,
)

from conftest import bundled

# --- neighbor sensing -------------------------------------------------------


def test_neighbor_established_on_third_consecutive_hello():
    t = NeighborTable()
    assert t.process_hello("b", 0.0) is None
    assert t.process_hello("b", 1.0) is None
    assert t.process_hello("b", 2.0) == "established"
    assert t.is_established("b") and t.established() == ["b"]


def test_gap_restarts_the_streak():
    t = NeighborTable()
    t.process_hello("b", 0.0)
    t.process_hello("b", 1.0)
    t.process_hello("b", 4.0)  # two hellos missed
    assert t.process_hello("b", 5.0) is None
    assert t.process_hello("b", 6.0) == "established"


def test_neighbor_dropped_after_allowed_hello_loss():
    t = NeighborTable()
    for s in range(3):
        t.process_hello("b", float(s))
    assert t.expire(3.5) == []
    assert t.expire(4.0) == ["b"]  # two intervals after the last hello
    assert not t.is_established("b")


def test_self_rescue_hello_raises_alert_only():
    t = NeighborTable()
    for s in range(5):
        assert t.process_hello("r", float(s), role="self-rescue") == "alert"
    assert t.entries == {}


def test_params_neighbor_timeout():
    assert AodvParams().neighbor_timeout == 2.0
    assert AodvParams(hello_interval=0.5, allowed_hello_loss=4).neighbor_timeout == 2.0


# --- route table --------------------------------------------------------------


def test_route_expires_after_active_timeout():
    rt = RouteTable(AodvParams(active_route_timeout=10))
    rt.update("d", "a", 2, 0.0, seq=1)
    assert rt.lookup("d", 9.99).next_hop == "a"
    assert rt.lookup("d", 10.0) is None


def test_refresh_extends_only_live_routes():
    rt = RouteTable(AodvParams(active_route_timeout=10))
    rt.update("d", "a", 2, 0.0)
    rt.refresh("d", 5.0)
    assert rt.lookup("d", 14.0) is not None
    rt.refresh("d", 20.0)
    assert rt.lookup("d", 20.0) is None


def test_newer_sequence_wins_then_shorter_path():
    rt = RouteTable()
    rt.update("d", "a", 3, 0.0, seq=1)
    assert not rt.update("d", "b", 5, 0.0, seq=1)
    assert rt.update("d", "b", 2, 0.0, seq=1)
    assert rt.update("d", "c", 9, 0.0, seq=2)
    assert rt.lookup("d", 0.0).next_hop == "c"


def test_direct_route_beats_equal_gateway_route():
    rt = RouteTable()
    rt.update("d", "g", 2, 0.0, seq=0, gateway="g")
    assert rt.update("d", "a", 2, 0.0, seq=0)
    assert not rt.lookup("d", 0.0).is_gateway_route


def test_broken_route_demands_fresher_replies():
    rt = RouteTable()
    rt.update("d", "a", 2, 0.0, seq=3)
    rt.invalidate_via("a")
    assert rt.lookup("d", 0.0) is None and rt.wanted_seq("d") == 4
    assert not rt.update("d", "b", 1, 0.0, seq=3)
    assert rt.update("d", "b", 1, 0.0, seq=4)


def test_request_and_reply_forwarding_count_hops():
    req = RouteRequest(1, "s", 5, "d", dest_seq=2).forwarded().forwarded()
    assert req.hop_count == 2 and req.dest_seq == 2
    rep = RouteReply(1, "s", "d", "g", True, 0, 7).forwarded()
    assert rep.hop_count == 1 and rep.gateway_flag and rep.seq == 7


def test_best_gateway_is_min_hops_then_id():
    d = Discovery("d", 1, 1, 3, 0.0)
    assert d.best_gateway() is None
    d.gateway_replies = {"G2": (3, "X1", 1), "G1": (1, "G1", 1), "G0": (1, "Y", 1)}
    assert d.best_gateway() == ("G0", 1, "Y", 1)


def test_mailbox_keeps_one_copy_per_message():
    box = CommandCenterMailbox()
    m = DataMessage("m", "s", "d", "general")
    assert box.store(m) and not box.store(m)
    assert box.holds("m") and [x.id for x in box.fetch("d")] == ["m"]
    assert not box.holds("m") and box.fetch("d") == []


def test_data_message_encapsulation_and_path():
    m = DataMessage("m", "s", "d", "general")
    e = m.encapsulated("g")
    assert e.next_target == "g" and e.decapsulated().next_target == "d"
    assert m.visit("s").stamped("s").path == ("s",)
    with pytest.raises(ValueError):
        DataMessage("m", "s", "d", "spam")


# --- scenario level -------------------------------------------------------------


def _pair(policy, dist=500.0, horizon=30.0, **kw):
    nodes = (NodeSpec("a", "messaging", (0, 0)), NodeSpec("b", "messaging", (dist, 0)))
    return Scenario("pair", nodes=nodes, messages=(MessageSpec("m", "a", 5.0, "b"),),
                    routing=RoutingSpec(policy=policy, **kw), experiment=ExperimentSpec(horizon=horizon))


def test_unreachable_after_three_discoveries():
    r = run(_pair("full"))
    unreachable = r.log.of("unreachable")
    assert unreachable[0]["t_us"] == 17_000_000 and unreachable[0]["attempts"] == 3
    rreqs = [x["t_us"] for x in r.log.of("rreq") if x["node"] == "a"]
    assert rreqs == [5_000_000, 9_000_000, 13_000_000]
    assert r.log.of("carry")[0]["mode"] == "static"


def test_adhoc_only_keeps_discovering_and_never_carries():
    r = run(_pair("adhoc-only", horizon=60))
    assert len(r.log.of("unreachable")) >= 3
    assert not r.log.of("carry") and not r.log.of("replicate")


def test_neighbor_delivery_needs_established_link():
    # hellos start at a random phase; three of them take 2-3 s
    r = run(_pair("full", dist=50.0))
    d = r.log.of("deliver")[0]
    assert d["path"] == ["a", "b"] and d["delay_us"] < 1_000_000
    established = min(x["t_us"] for x in r.log.of("contact-begin") if x["node"] == "a")
    assert 2_000_000 <= established <= 3_100_000


def test_gateway_relay_reenters_ladder_when_cellular_is_lost():
    # G sits in coverage only briefly; the encapsulated message arrives after it left
    cov = CellularCoverage((Disc((0, 100), 20),))
    nodes = (NodeSpec("S", "messaging", (0, 0)),
             NodeSpec("G", "messaging", (0, 100), mobility=Waypoints(((0, 100), (0, 60)), 100.0, depart=8.81)),
             NodeSpec("D", "messaging", (900, 0)),
             NodeSpec("CC", "command-center", (5000, 5000)))
    s = Scenario("relay", nodes=nodes, messages=(MessageSpec("m", "S", 5.0, "D"),),
                 radio=RadioSpec(coverage=cov), experiment=ExperimentSpec(horizon=20))
    r = run(s)
    assert r.log.of("encapsulate") and r.log.of("decapsulate")
    assert r.log.of("relay-failed")[0]["reason"] == "cellular lost"
    final = r.log.of("message-final")[0]
    assert final["holders"] or final["at_cc"] or final["delivered"] or final["in_flight"]


def test_gateway_stores_at_cc_and_destination_fetches():
    s = bundled("gateway-choice")
    s = replace(s, nodes=tuple(n for n in s.nodes if n.id != "A"))
    r = run(s)
    found = r.log.of("route-found")[0]
    assert found["via_gateway"] and found["gateway"] == "G1" and found["t_us"] == 9_000_000
    assert r.log.of("store-at-cc")[0]["dst"] == "D"
    assert r.log.of("message-final")[0]["at_cc"]


def test_cellular_destination_is_reached_directly():
    cov = CellularCoverage((Disc((0, 0), 10), Disc((900, 0), 10)))
    nodes = (NodeSpec("a", "messaging", (0, 0)), NodeSpec("b", "messaging", (900, 0)))
    s = Scenario("cell", nodes=nodes, messages=(MessageSpec("m", "a", 1.0, "b"),),
                 radio=RadioSpec(coverage=cov), experiment=ExperimentSpec(horizon=5))
    r = run(s)
    d = r.log.of("deliver")[0]
    assert d["path"] == ["a", "b"] and d["delay_us"] == 50_000
    assert not r.log.of("rreq")


def test_rescue_hello_triggers_emergency_to_cc():
    nodes = (NodeSpec("r1", "self-rescue", (0, 0)), NodeSpec("r2", "self-rescue", (50, 0)),
             NodeSpec("w", "messaging", (300, 0), mobility=Waypoints(((300, 0), (60, 40), (300, 0)), 5.0)),
             NodeSpec("cc", "command-center", (5000, 0)))
    s = Scenario("alert", nodes=nodes, radio=RadioSpec(coverage=CellularCoverage((Disc((300, 0), 30),))),
                 experiment=ExperimentSpec(horizon=200))
    r = run(s)
    assert r.log.of("rescue-alert")
    orig = r.log.of("originate")
    assert [o["msg_id"] for o in orig] == ["emergency-r1"] and orig[0]["kind"] == "emergency"
    assert r.log.of("carry")[0]["mode"] == "flood"
    d = r.log.of("deliver")[0]
    assert d["node"] == "cc" and d["path"] == ["w", "cc"]
    assert r.log.of("emergency-composed")[0]["message"]["group_size"] == 2


def test_emergency_floods_even_under_static_policy():
    s = bundled("fig9-obstacle")
    s = replace(s, messages=(MessageSpec("e", "S", 5.0, "D", kind="emergency"),))
    r = run(s, policy="static")
    assert {c["mode"] for c in r.log.of("carry")} == {"flood"}
    assert r.metrics["messages"]["delivered"] == 1


def test_emergency_gets_a_single_discovery():
    s = replace(_pair("full"), messages=(MessageSpec("e", "a", 5.0, "b", kind="emergency"),))
    r = run(s)
    assert [x["attempts"] for x in r.log.of("unreachable")] == [1]


def test_delivered_notice_clears_replicas():
    s = bundled("fig9-obstacle")
    on = run(s, policy="flood")
    off = run(replace(s, routing=replace(s.routing, delivered_notice=False)), policy="flood")
    assert on.metrics["messages"]["delivered"] == off.metrics["messages"]["delivered"] == 1
    for n in on.log.of("delivered-notice"):
        assert n["model_extension"] is True
    held_on = on.log.of("message-final")[0]["holders"]
    held_off = off.log.of("message-final")[0]["holders"]
    assert len(held_on) <= len(held_off)


# --- invariants on random mobile scenarios -------------------------------------


def random_mobile_scenario(seed: int) -> Scenario:
    rng = random.Random(seed)
    n = rng.randint(3, 6)
    nodes = []
    for i in range(n):
        pts = tuple((rng.uniform(0, 400), rng.uniform(0, 400)) for _ in range(rng.randint(1, 4)))
        nodes.append(NodeSpec(f"n{i}", "messaging", pts[0], mobility=Waypoints(pts, rng.uniform(1, 8), loop=True)))
    msgs = []
    for k in range(2):
        src = rng.randrange(n)
        msgs.append(MessageSpec(f"m{k}", f"n{src}", rng.uniform(1, 20), f"n{(src + 1) % n}"))
    return Scenario(f"rand{seed}", seed, tuple(nodes), tuple(msgs), experiment=ExperimentSpec(horizon=90))


slow = settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@slow
@given(st.integers(0, 10**6), st.sampled_from(["full", "adhoc-only", "static", "flood"]))
def test_messages_are_conserved(seed, policy):
    r = run(random_mobile_scenario(seed), policy=policy)
    for f in r.log.of("message-final"):
        assert f["delivered"] or f["holders"] or f["at_cc"] or f["in_flight"], f


@slow
@given(st.integers(0, 10**6), st.sampled_from(["full", "adhoc-only", "static", "flood"]))
def test_delivered_paths_are_loop_free(seed, policy):
    r = run(random_mobile_scenario(seed), policy=policy)
    for path in r.metrics["messages"]["paths"].values():
        assert len(path) == len(set(path)), path


@slow
@given(st.integers(0, 10**6))
def test_flooding_never_delivers_later_than_static(seed):
    s = random_mobile_scenario(seed)
    static = run(s, policy="static").metrics["messages"]["delivered_at_s"]
    flood = run(s, policy="flood").metrics["messages"]["delivered_at_s"]
    for m, t in static.items():
        if t is not None:
            assert flood[m] is not None and flood[m] <= t + 1e-9


@slow
@given(st.integers(0, 10**6))
def test_data_rides_only_unexpired_routes(seed):
    r = run(random_mobile_scenario(seed), policy="full")
    for f in r.log.of("data-forward"):
        if f["route_expiry"] is not None:
            assert f["t_us"] / 1e6 < f["route_expiry"]
