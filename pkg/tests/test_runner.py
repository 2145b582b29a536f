from dataclasses import replace
from fractions import Fraction

import pytest

from teamphone.rescue.protocol import count_overhead
from teamphone.sim.radio import connectivity
from teamphone.sim.runner import run
from teamphone.sim.scenario import (
    ExperimentSpec,
    MessageSpec,
    NodeSpec,
    RescueSpec,
    Scenario,
    ScenarioError,
)

from conftest import FIG4A, bundled


def _fig4a(**rescue):
    nodes = tuple(NodeSpec(u, "self-rescue", p) for u, p in FIG4A.items())
    return Scenario("fig4a", nodes=nodes, rescue=RescueSpec(**rescue), experiment=ExperimentSpec(horizon=65))


def test_empty_scenario_runs():
    r = run(Scenario())
    assert r.metrics["messages"]["originated"] == 0
    assert r.metrics["energy"]["total_mj"] == 0
    assert len(r.log) == 0


def test_fig4a_energy_reconciles_with_the_log():
    r = run(_fig4a())
    e = r.metrics["energy"]
    assert (e["wakeups"], e["always_awake_wakeups"]) == (22, 72)
    assert Fraction(e["total_mj_exact"]) == 22 * Fraction("1011.5") + 50 * Fraction("64.9")
    for u in FIG4A:
        assert r.energy.nodes[u].mj == r.energy.recomputed_mj(u)
    assert e["per_node_wakeups"] == {"i": 3, "j": 3, "k": 4, "l": 3, "m": 6, "n": 3}


def test_slot_events_fill_the_window_after_the_protocol():
    r = run(_fig4a())
    slots = sorted({x["slot"] for x in r.log.of("slot-awake", "slot-asleep")})
    assert slots == list(range(12))
    assert min(x["t_us"] for x in r.log.of("slot-awake")) == 5_000_000
    short = run(_fig4a(), horizon=64.9)
    assert short.metrics["energy"]["slots"] == 6 * 11


def test_overhead_metric_matches_closed_form():
    r = run(_fig4a())
    oh = count_overhead(6, connectivity(FIG4A, 100))
    assert r.metrics["overhead"] == {"broadcast": 18, "flood": 54, "total": 72, "per_node_mean": 12.0}
    assert r.metrics["overhead"]["total"] == oh.total


@pytest.mark.parametrize("policy,wakeups", [("clique", 22), ("mis", 27), ("awake", 72)])
def test_schedule_policy_override(policy, wakeups):
    r = run(_fig4a(schedule_policy=policy))
    assert r.metrics["energy"]["wakeups"] == wakeups
    assert bool(r.log.of("schedule-override")) == (policy != "clique")


def test_rescue_section():
    m = run(_fig4a()).metrics["rescue"]
    assert m["initiators"] == ["i"] and m["outliers"] == ["m"]
    assert m["positioned_pct"] == pytest.approx(100 * 5 / 6)
    assert m["gamma"]["i"] == "1/4" and m["theta"]["i"] == "13/12"
    assert m["protocol_violations"] == 0 and m["schedule_conflicts"] == 0


def test_battery_section():
    nodes = tuple(NodeSpec(u, "self-rescue", p, battery_mj=10_000.0) for u, p in FIG4A.items())
    r = run(Scenario("b", nodes=nodes, experiment=ExperimentSpec(horizon=65)))
    assert r.metrics["battery"]["m"]["remaining_mj"] == pytest.approx(10_000 - (6 * 1011.5 + 6 * 64.9))


def test_metric_filter():
    s = replace(_fig4a(), experiment=ExperimentSpec(horizon=65, metrics=("overhead",)))
    assert set(run(s).metrics) == {"scenario", "seed", "horizon_s", "overhead"}


def test_coverage_metric_is_seeded():
    a = run(_fig4a(), coverage_samples=100_000).metrics["coverage"]
    b = run(_fig4a(), coverage_samples=100_000).metrics["coverage"]
    assert a == b and 0 < a["time_averaged"] < 1


def test_same_seed_gives_identical_logs():
    s = bundled("fig10-linkbreak")
    assert run(s).log.to_jsonl() == run(s).log.to_jsonl()


def test_seed_changes_only_timing_details():
    s = bundled("fig10-linkbreak")
    a, b = run(s, seed=1), run(s, seed=2)
    assert a.log.to_jsonl() != b.log.to_jsonl()
    assert a.metrics["messages"]["paths"] == b.metrics["messages"]["paths"]


def test_scenario_validation():
    a = NodeSpec("a", "messaging", (0, 0))
    with pytest.raises(ScenarioError):
        Scenario(nodes=(a, a))
    with pytest.raises(ScenarioError):
        Scenario(nodes=(a,), messages=(MessageSpec("m", "a", 1.0, "zz"),))
    with pytest.raises(ScenarioError):
        Scenario(nodes=(NodeSpec("r", "self-rescue", (0, 0)), a), messages=(MessageSpec("m", "r", 1.0, "a"),))
    with pytest.raises(ScenarioError):
        Scenario(nodes=(a,), messages=(MessageSpec("e", "a", 1.0, kind="emergency"),))
    with pytest.raises(ScenarioError):
        Scenario(nodes=(NodeSpec("c", "command-center", (0, 0), cellular=False),))
    with pytest.raises(ScenarioError):
        Scenario(experiment=ExperimentSpec(coverage_samples=10))
