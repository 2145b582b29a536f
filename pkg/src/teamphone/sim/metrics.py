"""Metrics computed from an event log alone, so every number can be re-derived."""

from __future__ import annotations

from collections import Counter
from fractions import Fraction

from ..rescue.scheduling import WakeParams, WakeSchedule
from .coverage import time_averaged_coverage
from .energy import EnergyLedger, as_fraction

ROUTING_COUNTERS = (
    "rreq",
    "rrep",
    "data-forward",
    "cellular-forward",
    "encapsulate",
    "decapsulate",
    "store-at-cc",
    "fetch-from-cc",
    "replicate",
    "contact-begin",
    "contact-end",
    "unreachable",
    "forward-failed",
    "delivered-notice",
    "rescue-alert",
)


def _messages(records) -> dict:
    originated, created, delays, paths = [], {}, {}, {}
    for r in records:
        if r["event"] == "originate" and r["msg_id"] not in created:
            originated.append(r["msg_id"])
            created[r["msg_id"]] = r["t_us"]
        elif r["event"] == "deliver" and r["msg_id"] not in delays:
            delays[r["msg_id"]] = r["delay_us"]
            paths[r["msg_id"]] = r["path"]
    n = len(originated)
    return {
        "originated": n,
        "delivered": len(delays),
        "delivery_ratio": len(delays) / n if n else 0.0,
        "delay_s": {m: (delays[m] / 1e6 if m in delays else None) for m in sorted(originated)},
        "delivered_at_s": {m: (created[m] + delays[m]) / 1e6 if m in delays else None for m in sorted(originated)},
        "paths": {m: paths[m] for m in sorted(paths)},
    }


def _energy(records, scenario) -> tuple[dict, EnergyLedger]:
    r = scenario.rescue
    ledger = EnergyLedger(as_fraction(r.tau), as_fraction(r.power_awake_mw), as_fraction(r.power_sleep_mw))
    for rec in records:
        if rec["event"] in ("slot-awake", "slot-asleep"):
            ledger.record(rec["node"], rec["event"] == "slot-awake")
    total = ledger.total_mj
    awake = ledger.always_awake_mj()
    ratio = total / awake if awake else Fraction(0)
    out = {
        "awake_slot_mj": float(ledger.awake_slot_mj),
        "sleep_slot_mj": float(ledger.sleep_slot_mj),
        "slots": ledger.total_slots,
        "wakeups": ledger.total_awake_slots,
        "always_awake_wakeups": ledger.total_slots,
        "wakeup_savings": 1 - ledger.total_awake_slots / ledger.total_slots if ledger.total_slots else 0.0,
        "total_mj": float(total),
        "total_mj_exact": str(total),
        "always_awake_mj": float(awake),
        "ratio_to_always_awake": float(ratio),
        "energy_savings": float(1 - ratio) if awake else 0.0,
        "per_node_mj": {u: float(ledger.nodes[u].mj) for u in sorted(ledger.nodes)},
        "per_node_wakeups": {u: ledger.nodes[u].awake_slots for u in sorted(ledger.nodes)},
    }
    return out, ledger


def _overhead(records, scenario) -> dict:
    c = Counter(r["category"] for r in records if r["event"] == "message-sent")
    n = len(scenario.ids("self-rescue"))
    total = c["broadcast"] + c["flood"]
    return {
        "broadcast": c["broadcast"],
        "flood": c["flood"],
        "total": total,
        "per_node_mean": total / n if n else 0.0,
    }


def schedules_from_log(records, tau: float = 5.0) -> dict:
    """Effective wake-up schedules: protocol results, replaced by any override."""
    out: dict = {}
    start = {}
    for r in records:
        if r["event"] == "slot-awake" or r["event"] == "slot-asleep":
            if r["slot"] == 0:
                start.setdefault(r["node"], r["t_us"] / 1e6)
    for r in records:
        if r["event"] in ("schedule-fixed", "schedule-override"):
            u = r["node"]
            params = WakeParams(tau, r["hyperperiod"], start.get(u, 0.0))
            out[u] = WakeSchedule(u, frozenset(r["slots"]), params)
    return out


def _rescue(records, scenario) -> dict:
    theta, gamma, cliques = {}, {}, set()
    initiators = []
    for r in records:
        if r["event"] == "theta":
            theta[r["node"]], gamma[r["node"]] = r["theta"], r["gamma"]
            cliques.update(tuple(c) for c in r["cliques"])
        elif r["event"] == "initiator":
            initiators.append(r["node"])
    schedules = schedules_from_log(records, scenario.rescue.tau)
    positioned, outliers = set(), set()
    views: dict = {}
    for r in records:
        if r["event"] == "position-fixed" and r["node"] in initiators:
            view = views.setdefault(r["node"], {})
            if r.get("outlier"):
                outliers.add(r["target"])
            else:
                positioned.add(r["target"])
                view[r["target"]] = (r["x"], r["y"])
    n = len(scenario.ids("self-rescue"))
    return {
        "group_size": n,
        "theta": dict(sorted(theta.items())),
        "gamma": dict(sorted(gamma.items())),
        "cliques": sorted(list(c) for c in cliques),
        "initiators": sorted(initiators),
        "schedules": {u: sorted(schedules[u].awake_slots) for u in sorted(schedules)},
        "hyperperiod": {u: schedules[u].params.hyperperiod_slots for u in sorted(schedules)},
        "positioned": sorted(positioned),
        "outliers": sorted(outliers - positioned),
        "positioned_pct": 100.0 * len(positioned) / n if n else 0.0,
        "positions": {k: dict(sorted(v.items())) for k, v in sorted(views.items())},
        "protocol_violations": sum(1 for r in records if r["event"] == "protocol-violation"),
        "schedule_conflicts": sum(1 for r in records if r["event"] == "schedule-conflict"),
    }


def compute_metrics(records, scenario, coverage_seed: int | None = None) -> dict:
    energy, _ = _energy(records, scenario)
    rescue = _rescue(records, scenario)
    counts = Counter(r["event"] for r in records)
    routing = {k: counts[k] for k in ROUTING_COUNTERS}
    routing["rrep_gateway"] = sum(1 for r in records if r["event"] == "rrep" and r["gateway_flag"])
    out = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "horizon_s": scenario.experiment.horizon,
        "events": len(records),
        "messages": _messages(records),
        "energy": energy,
        "overhead": _overhead(records, scenario),
        "routing": routing,
        "rescue": rescue,
    }
    batteries = {n.id: n.battery_mj for n in scenario.nodes if n.battery_mj is not None and n.role == "self-rescue"}
    if batteries:
        used = energy["per_node_mj"]
        out["battery"] = {u: {"capacity_mj": cap, "remaining_mj": cap - used.get(u, 0.0)}
                          for u, cap in sorted(batteries.items())}
    samples = scenario.experiment.coverage_samples
    if samples and rescue["schedules"]:
        scheds = schedules_from_log(records, scenario.rescue.tau)
        pos = {n.id: tuple(n.motion.position_at(scenario.rescue.trigger)) for n in scenario.nodes
               if n.role == "self-rescue"}
        radius = min(scenario.node(u).radio_range for u in pos)
        seed = scenario.seed if coverage_seed is None else coverage_seed
        out["coverage"] = {
            "time_averaged": time_averaged_coverage(scheds, pos, radius, samples, seed),
            "samples": samples,
        }
    wanted = scenario.experiment.metrics
    if wanted:
        keep = {"scenario", "seed", "horizon_s", *wanted}
        out = {k: v for k, v in out.items() if k in keep}
    return out
