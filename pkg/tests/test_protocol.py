import random

import pytest
from hypothesis import given, settings, strategies as st

from teamphone.graph import maximal_cliques
from teamphone.rescue.emergency import EmergencyMessage, LocationRecord, RelativePosition
from teamphone.rescue.protocol import (
    LastKnownLocation,
    Phase,
    ProtocolState,
    RescueConfig,
    count_overhead,
    position_flooders,
    run_rescue_protocol,
)
from teamphone.rescue.scheduling import schedule_network
from teamphone.sim.kernel import Kernel
from teamphone.sim.radio import connectivity

from conftest import FIG4A

FIG11 = dict(FIG4A, o=(130, -40), p=(60, 130))


def _run(pos, **cfg):
    k = Kernel()
    return run_rescue_protocol(pos, k, pos, RescueConfig(**cfg)), k


def _group(rng, n, side):
    return {i: (rng.uniform(0, side), rng.uniform(0, side)) for i in range(n)}


def test_fig4a_protocol_matches_centralized_schedules():
    out, k = _run(FIG4A)
    central = schedule_network(connectivity(FIG4A, 100), start_time=out.start_time)
    assert {u: s.awake_slots for u, s in out.schedules.items()} == {u: s.awake_slots for u, s in central.items()}
    assert not k.log.of("protocol-violation")
    assert [r["node"] for r in k.log.of("initiator")] == ["i"]


def test_fig4a_overhead():
    out, _ = _run(FIG4A)
    oh = count_overhead(6, connectivity(FIG4A, 100))
    assert out.sent == {"broadcast": 18, "flood": 54}
    assert (oh.broadcasts, oh.floods, oh.total) == (18, 54, 72)


def test_fig4a_outlier_in_emergency_message():
    out, _ = _run(FIG4A)
    msg = out.emergency_templates()["i"]
    assert msg.group_size == 6 and msg.outliers == {"m"}
    assert msg.position_of("i") == (0.0, 0.0) and msg.position_of("m") is None
    assert msg.to_dict()["trapped_at_s"] == 0.0


def test_fig11_cascade_extends_beyond_one_hop():
    out, k = _run(FIG11)
    final = out.assignments["i"]
    # o and p are two hops from the initiator yet get positioned by the cascade
    assert {"o", "p"} <= final.positioned and final.outliers == {"m"}
    ranks = {r["node"]: r["rank"] for r in k.log.of("schedule-fixed")}
    assert ranks["i"] == 0 and len(set(ranks.values())) == len(FIG11)


def test_isolated_nodes_and_singletons():
    out, k = _run({"a": (0, 0), "b": (500, 0)})
    assert all(s.awake_slots == frozenset({0}) and s.params.hyperperiod_slots == 1 for s in out.schedules.values())
    assert out.sent["flood"] == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 12))
def test_overhead_closed_form_matches_instrumented_count(seed, n):
    pos = _group(random.Random(seed), n, 250)
    out, _ = _run(pos)
    oh = count_overhead(n, connectivity(pos, 100))
    assert out.sent == {"broadcast": oh.broadcasts, "flood": oh.floods}
    assert oh.broadcasts == 3 * n
    assert oh.total <= 2 * (n * n + n)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 10), st.floats(0, 50))
def test_bounded_skew_keeps_the_cascade_on_time(seed, n, skew_ms):
    pos = _group(random.Random(seed), n, 200)
    out, k = _run(pos, skew_ms=skew_ms, seed=seed)
    assert not k.log.of("protocol-violation")
    assert all(node.state.phase == Phase.SCHEDULED for node in out.nodes.values())
    central = schedule_network(connectivity(pos, 100))
    assert {u: s.awake_slots for u, s in out.schedules.items()} == {u: s.awake_slots for u, s in central.items()}


def test_position_flooders_are_local_minima_of_rank():
    g = connectivity(FIG4A, 100)
    assert position_flooders(g) == ["k", "m", "n"]


def test_count_overhead_validates_size():
    g = connectivity(FIG4A, 100)
    with pytest.raises(ValueError):
        count_overhead(5, g)
    with pytest.raises(ValueError):
        count_overhead(0, g)


def test_phase_never_moves_backwards():
    s = ProtocolState("a")
    s.advance(Phase.FLOODING_THETA)
    with pytest.raises(Exception):
        s.advance(Phase.DISCOVERING)


def test_emergency_message_consistency_checks():
    locs = (LocationRecord("a", 1.0, 2.0, 0.0, 5.0),)
    with pytest.raises(ValueError):
        EmergencyMessage(2, 0.0, locs, (RelativePosition("a", 0.0, 0.0),))
    with pytest.raises(ValueError):
        EmergencyMessage(2, 0.0, locs, (RelativePosition("a", 0.0, 0.0), RelativePosition("b", None, None)))


def test_last_known_location_travels_with_theta():
    loc = LastKnownLocation(31.0, 121.0, 0.0, 10.0)
    k = Kernel()
    out = run_rescue_protocol(FIG4A, k, FIG4A, RescueConfig(), locations={"k": loc})
    rec = {r.node: r for r in out.emergency_templates()["i"].last_known_locations}
    assert rec["k"].lat == 31.0 and rec["j"].lat is None
