"""Per-slot energy accounting for duty-cycled self-rescue nodes.

Values are kept as exact fractions so that the ledger total always equals the
product of slot counts and per-slot energies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

# Measured WiFi power while awake / asleep, and the slot length used with them.
POWER_AWAKE_MW = Fraction("202.30")
POWER_SLEEP_MW = Fraction("12.98")
TAU_S = Fraction(5)


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass
class NodeEnergy:
    awake_slots: int = 0
    sleep_slots: int = 0
    mj: Fraction = Fraction(0)


@dataclass
class EnergyLedger:
    tau: Fraction = TAU_S
    power_awake: Fraction = POWER_AWAKE_MW
    power_sleep: Fraction = POWER_SLEEP_MW
    nodes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = as_fraction(self.tau)
        self.power_awake = as_fraction(self.power_awake)
        self.power_sleep = as_fraction(self.power_sleep)

    @property
    def awake_slot_mj(self) -> Fraction:
        return self.power_awake * self.tau

    @property
    def sleep_slot_mj(self) -> Fraction:
        return self.power_sleep * self.tau

    def record(self, node, awake: bool) -> None:
        e = self.nodes.setdefault(node, NodeEnergy())
        if awake:
            e.awake_slots += 1
            e.mj += self.awake_slot_mj
        else:
            e.sleep_slots += 1
            e.mj += self.sleep_slot_mj

    def recomputed_mj(self, node) -> Fraction:
        e = self.nodes[node]
        return e.awake_slots * self.awake_slot_mj + e.sleep_slots * self.sleep_slot_mj

    @property
    def total_mj(self) -> Fraction:
        return sum((e.mj for e in self.nodes.values()), Fraction(0))

    @property
    def total_awake_slots(self) -> int:
        return sum(e.awake_slots for e in self.nodes.values())

    @property
    def total_slots(self) -> int:
        return sum(e.awake_slots + e.sleep_slots for e in self.nodes.values())

    def always_awake_mj(self) -> Fraction:
        return self.total_slots * self.awake_slot_mj
