"""Monte Carlo coverage of a self-rescue group under a wake-up schedule."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from ..graph import NodeId, union_membership

MIN_SAMPLES = 100_000


def group_coverage(
    awake: Iterable[NodeId],
    positions: Mapping[NodeId, tuple],
    radius: float,
    samples: int = MIN_SAMPLES,
    seed: int = 0,
) -> float:
    """Share of the whole group's covered area that the awake nodes cover."""
    if samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples")
    ids = sorted(positions)
    awake = set(awake)
    if not ids or not awake:
        return 0.0
    if awake >= set(ids):
        return 1.0
    hits = union_membership(np.array([positions[u] for u in ids], dtype=float), radius, samples, seed)
    in_group = hits.any(axis=1)
    cols = [i for i, u in enumerate(ids) if u in awake]
    in_awake = hits[:, cols].any(axis=1)
    return float(in_awake.sum() / in_group.sum())


def slot_coverages(
    schedules: Mapping[NodeId, object],
    positions: Mapping[NodeId, tuple],
    radius: float,
    samples: int = MIN_SAMPLES,
    seed: int = 0,
) -> list[float]:
    """Coverage in every slot of the common hyperperiod.

    One shared sample set is used for all slots, so slots with the same awake
    set get identical values.
    """
    ids = sorted(positions)
    h = 1
    for s in schedules.values():
        h = int(np.lcm(h, s.params.hyperperiod_slots))
    hits = union_membership(np.array([positions[u] for u in ids], dtype=float), radius, samples, seed)
    in_group = hits.any(axis=1)
    total = in_group.sum()
    out = []
    for slot in range(h):
        cols = [i for i, u in enumerate(ids) if schedules[u].is_awake(slot)]
        out.append(float(hits[:, cols].any(axis=1).sum() / total) if cols else 0.0)
    return out


def time_averaged_coverage(schedules, positions, radius, samples: int = MIN_SAMPLES, seed: int = 0) -> float:
    cov = slot_coverages(schedules, positions, radius, samples, seed)
    return float(sum(cov) / len(cov))
