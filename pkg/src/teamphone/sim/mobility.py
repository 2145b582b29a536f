"""Node motion: fixed points, waypoint walks and replayed traces.

Positions are a pure function of time so that link changes can be located
exactly by bisection between mobility steps.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

Point = tuple


@dataclass(frozen=True)
class Static:
    position: Point

    def position_at(self, t: float) -> Point:
        return self.position

    @property
    def moving(self) -> bool:
        return False


@dataclass(frozen=True)
class Waypoints:
    """Piecewise-linear walk at constant speed, optionally looping back to the start.

    The node waits at its first point until ``depart`` seconds.
    """

    points: tuple
    speed: float
    loop: bool = False
    depart: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(tuple(map(float, p)) for p in self.points))
        if not self.points:
            raise ValueError("waypoint list is empty")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")

    @property
    def moving(self) -> bool:
        return self.speed > 0 and len(self.points) > 1

    def _legs(self) -> list:
        pts = list(self.points)
        if self.loop and len(pts) > 1:
            pts.append(pts[0])
        return list(zip(pts, pts[1:]))

    def position_at(self, t: float) -> Point:
        if not self.moving or t <= self.depart:
            return self.points[0]
        legs = self._legs()
        lengths = [math.dist(a, b) for a, b in legs]
        total = sum(lengths)
        if total == 0:
            return self.points[0]
        travelled = (t - self.depart) * self.speed
        if self.loop:
            travelled %= total
        elif travelled >= total:
            return legs[-1][1]
        for (a, b), seg in zip(legs, lengths):
            if travelled <= seg:
                f = travelled / seg if seg else 0.0
                return (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))
            travelled -= seg
        return legs[-1][1]


@dataclass(frozen=True)
class Trace:
    """Replay of ``(t, x, y)`` rows; linear interpolation between rows."""

    rows: tuple

    def __post_init__(self):
        rows = tuple(sorted(tuple(map(float, r)) for r in self.rows))
        if not rows:
            raise ValueError("trace is empty")
        object.__setattr__(self, "rows", rows)

    @property
    def moving(self) -> bool:
        return len({(r[1], r[2]) for r in self.rows}) > 1

    def position_at(self, t: float) -> Point:
        times = [r[0] for r in self.rows]
        i = bisect.bisect_right(times, t)
        if i == 0:
            return self.rows[0][1:]
        if i == len(self.rows):
            return self.rows[-1][1:]
        t0, x0, y0 = self.rows[i - 1]
        t1, x1, y1 = self.rows[i]
        if t == t0:
            return (x0, y0)
        f = (t - t0) / (t1 - t0)
        return (x0 + f * (x1 - x0), y0 + f * (y1 - y0))


def mobility_step(position: Point, spec, t: float, dt: float) -> Point:
    """Position after advancing ``dt`` seconds from time ``t``.

    ``position`` is the current position; specs are time-parameterized, so it
    only serves as the answer for motionless specs.
    """
    if not getattr(spec, "moving", False):
        return position
    return spec.position_at(t + dt)
