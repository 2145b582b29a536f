from __future__ import annotations

import random
from functools import lru_cache

import pytest

from teamphone.cli.main import bundled_scenarios, resolve_scenario
from teamphone.cli.scenario_file import load_scenario
from teamphone.graph import Graph

FIG4A = {"i": (0, 0), "j": (50, 0), "l": (20, 60), "n": (60, 55), "k": (45, -70), "m": (-80, -20)}


@lru_cache(maxsize=None)
def bundled(name: str):
    return load_scenario(resolve_scenario(name))


def random_graph(rng: random.Random, n: int, p: float) -> Graph:
    nodes = list(range(n))
    edges = [(u, v) for u in nodes for v in nodes if u < v and rng.random() < p]
    return Graph(frozenset(nodes), frozenset(edges))


def random_connected_disk_group(rng: random.Random, n: int, side: float = 200.0, r: float = 100.0):
    from teamphone.positioning import unit_disk_distances

    while True:
        pos = {i: (rng.uniform(0, side), rng.uniform(0, side)) for i in range(n)}
        g, d = unit_disk_distances(pos, r)
        if g.is_connected():
            return pos, g, d


@pytest.fixture(scope="session")
def scenario_names():
    return sorted(bundled_scenarios())


# --- acceptance report: one line per criterion ----------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "passed": [], "failed": []})
    if rep.failed:
        entry["failed"].append(item.name)
    elif rep.when == "call" and rep.passed:
        entry["passed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "FAIL" if e["failed"] else "PASS"
        detail = f" (failed: {', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"criterion {n:2d} {status}  {e['title']}{detail}")
