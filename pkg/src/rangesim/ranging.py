"""Timing-to-distance math for the two-way time-of-flight ranging engine.

The round trip measured by the master is T_A; the slave-side fixed turn
time T_B is 17 symbols, with a 2-symbol switching delay T_D inside it.
Raw distance is d = c*(T_A - T_B)/2; a relative oscillator offset delta
between the two radios stretches the slave's notion of T_B and shows up
as a distance bias c*delta*T_B/2, removable when delta is observable
through frequency-error readout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .frame_codec import RadioConfig

SPEED_OF_LIGHT = 299_792_458.0  # m/s

T_D_SYMBOLS = 2
T_B_SYMBOLS = 17
MAX_OSC_OFFSET = 80e-6  # chip limit at SF8 / 1625 kHz


class RangingError(Exception):
    pass


class NegativeToF(RangingError):
    pass


class DegenerateData(RangingError):
    pass


@dataclass(frozen=True)
class RangingTiming:
    """Fixed timing quantities for one radio configuration."""

    t_s: float
    t_d: float
    t_b: float

    @classmethod
    def from_config(cls, config: RadioConfig) -> "RangingTiming":
        t_s = config.symbol_duration_s
        return cls(t_s=t_s, t_d=T_D_SYMBOLS * t_s, t_b=T_B_SYMBOLS * t_s)


@dataclass(frozen=True)
class CalibrationModel:
    slope: float
    intercept: float
    r_squared: float

    def apply(self, raw: float) -> float:
        return self.slope * raw + self.intercept


def distance_from_tof(t_a: float, t_b: float) -> float:
    """Raw two-way distance from round-trip time t_a and fixed turn time t_b."""
    if t_a < t_b:
        raise NegativeToF(f"t_a={t_a} < t_b={t_b}")
    return SPEED_OF_LIGHT * (t_a - t_b) / 2.0


def drift_error(delta: float, t_b: float) -> float:
    """Distance bias caused by relative oscillator offset delta."""
    return SPEED_OF_LIGHT * delta * t_b / 2.0


def corrected_distance(t_a: float, t_b: float, delta: float) -> float:
    """Offset-compensated distance; equals raw distance minus drift_error."""
    d = SPEED_OF_LIGHT * (t_a - (1.0 + delta) * t_b) / 2.0
    if d < -1.0:  # tolerate small negative results from timing noise
        raise NegativeToF(f"corrected distance {d:.3f} m is unphysical")
    return d


def passive_delta_t(pos_master: Sequence[float], pos_slave: Sequence[float],
                    pos_listener: Sequence[float]) -> float:
    """Time difference seen by a passive listener of a master-slave exchange.

    delta_t = (t_MS + t_SL) - t_ML, each term a straight-line propagation
    time.  Zero when the listener sits at the slave.
    """
    m = np.asarray(pos_master, dtype=float)
    s = np.asarray(pos_slave, dtype=float)
    l = np.asarray(pos_listener, dtype=float)
    t_ms = np.linalg.norm(s - m) / SPEED_OF_LIGHT
    t_sl = np.linalg.norm(l - s) / SPEED_OF_LIGHT
    t_ml = np.linalg.norm(l - m) / SPEED_OF_LIGHT
    return float(t_ms + t_sl - t_ml)


def fit_calibration(raw: Iterable[Tuple[float, float]]) -> CalibrationModel:
    """Ordinary least squares fit of true distance against raw measurement."""
    pairs = list(raw)
    if len(pairs) < 2:
        raise DegenerateData("need at least two calibration points")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if np.ptp(x) == 0.0:
        raise DegenerateData("all raw measurements identical")
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    ss_res = float(np.sum(residuals ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return CalibrationModel(slope=float(slope), intercept=float(intercept),
                            r_squared=r2)


def simulate_round_trip(distance_m: float, t_b: float, delta: float = 0.0,
                        noise_s: float = 0.0) -> float:
    """Forward model of the round trip the master would measure."""
    if distance_m < 0:
        raise ValueError("distance must be non-negative")
    return 2.0 * distance_m / SPEED_OF_LIGHT + (1.0 + delta) * t_b + noise_s


def noise_sigma_for_r2(true_distances: Sequence[float], target_r2: float) -> float:
    """Distance-noise sigma that makes an OLS calibration fit hit target_r2.

    For y = x + noise, expected r2 ~= var(x) / (var(x) + sigma^2), so
    sigma = std(x) * sqrt(1/r2 - 1).
    """
    if not 0.0 < target_r2 < 1.0:
        raise ValueError("target_r2 must be in (0, 1)")
    spread = float(np.std(np.asarray(true_distances, dtype=float)))
    if spread == 0.0:
        raise DegenerateData("calibration distances have no spread")
    return spread * math.sqrt(1.0 / target_r2 - 1.0)
