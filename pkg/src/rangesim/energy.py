"""Charge and energy bookkeeping for duty-cycled nodes.

Charge per activity is Q = I*t (coulombs), energy E = V*Q.  A cycle of
period tau is a fixed set of activities plus sleep for the remainder;
lifetime extrapolation divides battery charge by per-cycle charge.
All activity charges are kept unrounded; published figures that print
rounded intermediates are reproduced from the exact arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

SUPPLY_VOLTAGE = 3.0
SLEEP_CURRENT_A = 2.5e-6

SECONDS_PER_DAY = 86_400.0
SECONDS_PER_MONTH = 30.0 * SECONDS_PER_DAY
SECONDS_PER_YEAR = 365.25 * SECONDS_PER_DAY

CR2032_NOMINAL_C = 810.0  # 225 mAh


class EnergyModelError(Exception):
    pass


class OverfullCycle(EnergyModelError):
    pass


@dataclass(frozen=True)
class ActivityProfile:
    name: str
    avg_current_a: float
    duration_s: float

    @property
    def charge_c(self) -> float:
        return self.avg_current_a * self.duration_s

    @property
    def charge_mc(self) -> float:
        return self.charge_c * 1e3

    @property
    def energy_mj(self) -> float:
        return SUPPLY_VOLTAGE * self.charge_c * 1e3


# Measured per-activity profiles at a 3 V supply.
INSTRUCTION_CHECK_REQUEST = ActivityProfile("instruction_check_request", 23.5e-3, 41e-3)
INSTRUCTION_CHECK_CAD_ONLY = ActivityProfile("instruction_check_cad_only", 12e-3, 15e-3)
INSTRUCTION_CHECK_WITH_PACKET = ActivityProfile("instruction_check_with_packet", 15e-3, 106e-3)
PTP_RANGING_10_REPEATS = ActivityProfile("ptp_ranging_10_repeats", 22e-3, 379e-3)

CANONICAL_ACTIVITIES = (
    INSTRUCTION_CHECK_REQUEST,
    INSTRUCTION_CHECK_CAD_ONLY,
    INSTRUCTION_CHECK_WITH_PACKET,
    PTP_RANGING_10_REPEATS,
)


@dataclass
class CyclePlan:
    cycle_period_s: float
    activities: List[ActivityProfile] = field(default_factory=list)
    sleep_current_a: float = SLEEP_CURRENT_A

    @property
    def active_time_s(self) -> float:
        return sum(a.duration_s for a in self.activities)


def idle_check_plan(tau_s: float) -> CyclePlan:
    """One instruction check per cycle, no downlink, sleep otherwise."""
    return CyclePlan(tau_s, [INSTRUCTION_CHECK_REQUEST, INSTRUCTION_CHECK_CAD_ONLY])


def ranging_plan(tau_s: float) -> CyclePlan:
    """Instruction check plus a 10-repeat ranging task per cycle."""
    return CyclePlan(tau_s, [INSTRUCTION_CHECK_REQUEST, INSTRUCTION_CHECK_CAD_ONLY,
                             PTP_RANGING_10_REPEATS])


def cycle_charge_mc(plan: CyclePlan) -> float:
    """Total charge of one cycle in millicoulombs."""
    active = plan.active_time_s
    if active > plan.cycle_period_s:
        raise OverfullCycle(
            f"activities take {active:.3f} s, cycle is {plan.cycle_period_s:.3f} s")
    active_mc = sum(a.charge_mc for a in plan.activities)
    sleep_mc = plan.sleep_current_a * 1e3 * (plan.cycle_period_s - active)
    return active_mc + sleep_mc


def battery_cycles(capacity_c: float, plan: CyclePlan) -> int:
    """Whole cycles one battery charge supports."""
    return math.floor(capacity_c * 1e3 / cycle_charge_mc(plan))


def lifetime_s(plan: CyclePlan, capacity_c: float) -> float:
    return battery_cycles(capacity_c, plan) * plan.cycle_period_s


def practical_capacity_c(observed_cycles: int, plan: CyclePlan) -> float:
    """Back-derive usable battery charge from an observed cycle count."""
    if observed_cycles <= 0:
        raise ValueError("observed_cycles must be positive")
    return observed_cycles * cycle_charge_mc(plan) / 1e3


@dataclass
class EnergyLedger:
    """Cumulative charge for one simulated node."""

    battery_capacity_c: float = CR2032_NOMINAL_C
    supply_v: float = SUPPLY_VOLTAGE
    consumed_c: float = 0.0

    def add_activity(self, profile: ActivityProfile) -> None:
        self.consumed_c += profile.charge_c

    def add_current(self, current_a: float, duration_s: float) -> None:
        if duration_s < 0:
            raise ValueError("duration must be non-negative")
        self.consumed_c += current_a * duration_s

    @property
    def consumed_mc(self) -> float:
        return self.consumed_c * 1e3

    @property
    def energy_j(self) -> float:
        return self.supply_v * self.consumed_c

    @property
    def fraction_remaining(self) -> float:
        return max(0.0, 1.0 - self.consumed_c / self.battery_capacity_c)

    def voltage_proxy(self, full_v: float = 3.1, empty_v: float = 2.72) -> float:
        """Linear charge-depletion proxy, not an electrochemical model."""
        return empty_v + (full_v - empty_v) * self.fraction_remaining


def format_duration(seconds: float) -> str:
    """Human-readable span in the unit that reads best."""
    if seconds >= SECONDS_PER_YEAR:
        return f"{seconds / SECONDS_PER_YEAR:.2f} years"
    if seconds >= SECONDS_PER_MONTH:
        return f"{seconds / SECONDS_PER_MONTH:.2f} months"
    if seconds >= SECONDS_PER_DAY:
        return f"{seconds / SECONDS_PER_DAY:.1f} days"
    return f"{seconds / 3600.0:.2f} hours"
