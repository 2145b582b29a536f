"""Run reports: loading them back and diffing two of them."""

from __future__ import annotations

import json
import math
from pathlib import Path


class IncompatibleReports(ValueError):
    pass


def _flatten(d, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _numeric(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def compare_runs(a: dict, b: dict, strict: bool = False) -> dict:
    """Per-metric deltas (b - a) and ratios (b / a) over the numeric leaves.

    Metrics present on only one side are listed as incompatible; with
    ``strict`` they raise instead.
    """
    fa, fb = _flatten(a), _flatten(b)
    only_a = sorted(set(fa) - set(fb))
    only_b = sorted(set(fb) - set(fa))
    if strict and (only_a or only_b):
        raise IncompatibleReports(f"metric sets differ: only in first {only_a}, only in second {only_b}")
    diff = {}
    for k in sorted(set(fa) & set(fb)):
        x, y = fa[k], fb[k]
        if _numeric(x) and _numeric(y):
            ratio = y / x if x else (1.0 if y == 0 else math.inf)
            diff[k] = {"a": x, "b": y, "delta": y - x, "ratio": ratio}
        elif x != y:
            diff[k] = {"a": x, "b": y, "delta": None, "ratio": None}
    return {
        "diff": diff,
        "changed": sorted(k for k, d in diff.items() if d["delta"] is None or d["delta"] != 0),
        "incompatible": {"only_a": only_a, "only_b": only_b},
    }


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def dump_report(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=True, default=str) + "\n"
