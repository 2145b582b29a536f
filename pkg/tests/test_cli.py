import json
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from teamphone.cli import main as cli
from teamphone.cli.report import IncompatibleReports, compare_runs
from teamphone.cli.scenario_file import (
    ScenarioParseError,
    ScenarioSchemaError,
    UnitMismatchError,
    format_quantity,
    load_scenario,
    load_scenario_text,
    parse_quantity,
    serialize,
)
from teamphone.sim.kernel import KernelError
from teamphone.sim.mobility import Trace, Waypoints
from teamphone.sim.scenario import (
    ExperimentSpec,
    MessageSpec,
    NodeSpec,
    RescueSpec,
    RoutingSpec,
    Scenario,
)

from conftest import bundled

MINIMAL = """\
name: tiny
nodes:
  - {id: a, role: messaging, position: [0 m, 0 m]}
  - {id: b, role: messaging, position: [50 m, 0 m], range: 80 m}
messages:
  - {id: m, source: a, destination: b, at: 2 s}
"""


def test_every_bundled_scenario_loads(scenario_names):
    assert {"fig4a", "fig5", "fig9-obstacle", "fig10-linkbreak", "fig11-cascade", "fig13-square",
            "t1", "t2", "t3", "t4", "t5", "gateway-choice"} <= set(scenario_names)
    for name in scenario_names:
        s = bundled(name)
        assert s.name == name and s.nodes


def test_bundled_scenarios_round_trip(scenario_names):
    for name in scenario_names:
        s = bundled(name)
        assert load_scenario_text(serialize(s)) == s


def test_quantities_and_units():
    assert parse_quantity("1.5 km", "length") == 1500.0
    assert parse_quantity("250 ms", "time") == 0.25
    assert parse_quantity("36 km/h", "speed") == pytest.approx(10.0)
    assert format_quantity(0.1, "time") == "0.1 s"
    for bad in ("5", 5, "5 parsecs", "m 5"):
        with pytest.raises(ValueError):
            parse_quantity(bad, "length")


def test_negative_range_names_field_and_line():
    text = MINIMAL.replace("range: 80 m", "range: -80 m")
    with pytest.raises(ScenarioSchemaError) as info:
        load_scenario_text(text, "tiny.scenario")
    where, line, _ = info.value.errors[0]
    assert where == "nodes.1.range" and line == 4
    assert "tiny.scenario:4" in str(info.value)


def test_unit_mismatch_is_its_own_error():
    text = MINIMAL.replace("at: 2 s", "at: 2 m")
    with pytest.raises(UnitMismatchError) as info:
        load_scenario_text(text)
    where, line, msg = info.value.errors[0]
    assert where == "messages.0.at" and line == 6 and "time" in msg


def test_unknown_key_is_rejected():
    with pytest.raises(ScenarioSchemaError):
        load_scenario_text(MINIMAL + "colour: blue\n")


def test_yaml_syntax_error_reports_line():
    with pytest.raises(ScenarioParseError) as info:
        load_scenario_text("name: x\nnodes: [\n  - {id: a\n")
    assert info.value.errors[0][1] is not None


def test_semantic_errors_surface_as_schema_errors():
    text = MINIMAL.replace("destination: b", "destination: zz")
    with pytest.raises(ScenarioSchemaError, match="unknown destination"):
        load_scenario_text(text)


ids = st.sampled_from(["a", "b", "c", "d", "e"])
coord = st.floats(-500, 500, allow_nan=False, allow_infinity=False)


@st.composite
def scenarios(draw):
    names = draw(st.lists(ids, min_size=1, max_size=5, unique=True))
    nodes = []
    for u in names:
        role = draw(st.sampled_from(["messaging", "self-rescue"]))
        pos = (draw(coord), draw(coord))
        mob = draw(st.sampled_from([None, "walk", "trace"]))
        if mob == "walk":
            mob = Waypoints((pos, (draw(coord), draw(coord))), draw(st.floats(0, 20)), draw(st.booleans()),
                            draw(st.floats(0, 30)))
        elif mob == "trace":
            mob = Trace(((0.0, *pos), (draw(st.floats(1, 100)), draw(coord), draw(coord))))
        nodes.append(NodeSpec(u, role, pos, draw(st.floats(1, 300)), mob,
                              draw(st.sampled_from([None, True, False])),
                              battery_mj=draw(st.one_of(st.none(), st.floats(1, 1e6)))))
    senders = [n.id for n in nodes if n.role == "messaging"]
    msgs = ()
    if senders:
        msgs = tuple(MessageSpec(f"m{i}", draw(st.sampled_from(senders)), draw(st.floats(0, 50)),
                                 draw(st.sampled_from(names))) for i in range(draw(st.integers(0, 3))))
    return Scenario(
        draw(st.text("abcxyz-", min_size=1, max_size=8)), draw(st.integers(0, 2**31)), tuple(nodes), msgs,
        rescue=RescueSpec(trigger=draw(st.floats(0, 10)), tau=draw(st.floats(0.5, 10)),
                          schedule_policy=draw(st.sampled_from(["clique", "mis", "awake"]))),
        routing=RoutingSpec(policy=draw(st.sampled_from(["full", "adhoc-only", "static", "flood"])),
                            general_mode=draw(st.sampled_from(["static", "flood"]))),
        experiment=ExperimentSpec(horizon=draw(st.floats(0, 500)), metrics=tuple(draw(
            st.lists(st.sampled_from(["energy", "messages", "rescue"]), unique=True)))),
    )


@settings(max_examples=150, deadline=None)
@given(scenarios())
def test_serialize_load_round_trip(s):
    assert load_scenario_text(serialize(s)) == s


# --- command line -----------------------------------------------------------


def _write(tmp_path, text, name="s.scenario"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_writes_reports(tmp_path, capsys):
    path = _write(tmp_path, MINIMAL)
    assert cli.main(["run", path, "--out-dir", str(tmp_path / "out"), "--horizon", "20 s"]) == 0
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["messages"]["delivered"] == 1 and metrics["horizon_s"] == 20.0
    lines = (tmp_path / "out" / "events.jsonl").read_text().splitlines()
    assert lines and all(json.loads(x)["t_us"] >= 0 for x in lines)
    assert json.loads(capsys.readouterr().out)["scenario"] == "tiny"


def test_metrics_only_skips_event_log(tmp_path):
    assert cli.main(["run", "fig13-square", "--out-dir", str(tmp_path), "--metrics-only"]) == 0
    assert (tmp_path / "metrics.json").exists() and not (tmp_path / "events.jsonl").exists()


def test_exit_code_usage(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["run"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["run", "fig5", "--routing-policy", "telepathy"])
    assert e.value.code == 1
    assert cli.main(["run", "no-such-scenario"]) == 1
    assert cli.main(["run", "fig5", "--emit-coverage-samples", "10", "--out-dir", str(tmp_path)]) == 1


def test_exit_code_schema(tmp_path, capsys):
    path = _write(tmp_path, MINIMAL.replace("range: 80 m", "range: -80 m"))
    assert cli.main(["run", path, "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "nodes.1.range" in err and ":4:" in err


def test_exit_code_kernel(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise KernelError("event scheduled in the past")

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["run", _write(tmp_path, MINIMAL), "--out-dir", str(tmp_path)]) == 3
    assert "kernel error" in capsys.readouterr().err


def test_list_shows_bundled(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    assert "fig4a" in out and "gateway-choice" in out


def test_compare_identical_reports_is_all_zero(tmp_path, capsys):
    cli.main(["run", "fig4a", "--out-dir", str(tmp_path / "a"), "--metrics-only"])
    cli.main(["run", "fig4a", "--out-dir", str(tmp_path / "b"), "--metrics-only"])
    capsys.readouterr()
    assert cli.main(["compare", str(tmp_path / "a" / "metrics.json"), str(tmp_path / "b" / "metrics.json")]) == 0
    diff = json.loads(capsys.readouterr().out)
    assert diff["changed"] == []
    assert all(d["delta"] in (0, None) for d in diff["diff"].values())


def test_compare_clique_against_mis_schedule(tmp_path, capsys):
    text = (cli.resolve_scenario("fig4a")).read_text().replace("tau: 5 s", "tau: 5 s\n  schedule_policy: mis")
    mis = _write(tmp_path, text, "mis.scenario")
    cli.main(["run", "fig4a", "--out-dir", str(tmp_path / "a"), "--metrics-only"])
    cli.main(["run", mis, "--out-dir", str(tmp_path / "b"), "--metrics-only"])
    capsys.readouterr()
    cli.main(["compare", str(tmp_path / "a" / "metrics.json"), str(tmp_path / "b" / "metrics.json")])
    d = json.loads(capsys.readouterr().out)["diff"]["energy.wakeups"]
    assert (d["a"], d["b"], d["delta"]) == (22, 27, 5)


def test_compare_strict_rejects_different_metric_sets(tmp_path, capsys):
    (tmp_path / "a.json").write_text(json.dumps({"x": 1, "y": 2}))
    (tmp_path / "b.json").write_text(json.dumps({"x": 2}))
    assert cli.main(["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json")]) == 0
    assert cli.main(["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json"), "--strict"]) == 2
    assert cli.main(["compare", str(tmp_path / "a.json"), str(tmp_path / "missing.json")]) == 1


def test_compare_runs_ratio_and_nonnumeric():
    out = compare_runs({"a": {"n": 2, "s": "x"}, "z": 0}, {"a": {"n": 3, "s": "y"}, "z": 0})
    assert out["diff"]["a.n"]["ratio"] == 1.5 and out["diff"]["a.s"]["delta"] is None
    assert out["changed"] == ["a.n", "a.s"] and out["diff"]["z"]["ratio"] == 1.0
    with pytest.raises(IncompatibleReports):
        compare_runs({"a": 1}, {"b": 1}, strict=True)


def test_seed_and_policy_flags_override_file(tmp_path):
    cli.main(["run", "fig10-linkbreak", "--out-dir", str(tmp_path), "--metrics-only", "--seed", "9",
              "--routing-policy", "static"])
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["seed"] == 9 and m["messages"]["delivered"] == 0
