"""Deterministic discrete-event kernel with integer-microsecond time."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable

US_PER_S = 1_000_000


def to_us(seconds: float) -> int:
    return int(round(seconds * US_PER_S))


def to_s(us: int) -> float:
    return us / US_PER_S


class KernelError(RuntimeError):
    pass


@dataclass(order=True)
class Event:
    time_us: int
    seq: int
    kind: str = field(compare=False)
    target: Any = field(compare=False, default=None)
    action: Callable | None = field(compare=False, default=None, repr=False)
    cancelled: bool = field(compare=False, default=False)


class EventLog:
    """Ordered structured records; serialized one JSON object per line."""

    def __init__(self):
        self.records: list[dict] = []

    def append(self, t_us: int, event: str, /, **fields) -> dict:
        rec = {"t_us": t_us, "event": event}
        rec.update(fields)
        self.records.append(rec)
        return rec

    def of(self, *kinds: str) -> list[dict]:
        return [r for r in self.records if r["event"] in kinds]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":"), default=_jsonable) + "\n" for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


def _jsonable(x):
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    if hasattr(x, "numerator"):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


class Kernel:
    """Single-threaded event loop; ties on time are broken by insertion order."""

    def __init__(self, horizon_us: int | None = None):
        self.now = 0
        self.horizon_us = horizon_us
        self.log = EventLog()
        self._queue: list[Event] = []
        self._seq = 0
        self.processed = 0

    def at(self, time_us: int, kind: str, action: Callable, target=None) -> Event:
        if time_us < self.now:
            raise KernelError(f"cannot schedule {kind} in the past ({time_us} < {self.now})")
        ev = Event(int(time_us), self._seq, kind, target, action)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def after(self, delay_us: int, kind: str, action: Callable, target=None) -> Event:
        return self.at(self.now + delay_us, kind, action, target)

    def emit(self, event: str, /, **fields) -> dict:
        return self.log.append(self.now, event, **fields)

    def pending(self) -> int:
        return sum(1 for e in self._queue if not e.cancelled)

    def run(self, until_us: int | None = None) -> None:
        stop = until_us if until_us is not None else self.horizon_us
        while self._queue:
            if stop is not None and self._queue[0].time_us > stop:
                break
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time_us
            ev.action()
            self.processed += 1
        if stop is not None and self.now < stop:
            self.now = stop
