"""Radio propagation, the shared medium, and ranging-exchange physics.

Link budget uses a log-distance path-loss model; frames below the
receiver sensitivity are never delivered.  Any temporal overlap of two
transmissions on the same center frequency destroys both (no capture
effect).  Communication and ranging run on separate frequencies, so
ranging exchanges never collide with instruction traffic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ranging import SPEED_OF_LIGHT, corrected_distance, distance_from_tof

FREQ_COMM = "comm"
FREQ_RANGING = "ranging"


class ChannelError(Exception):
    pass


@dataclass
class ChannelModel:
    """Static geometry and link budget."""

    positions: Dict[int, Tuple[float, float, float]] = field(default_factory=dict)
    pathloss_exponent: float = 2.4
    ref_loss_db_at_1m: float = 40.0
    sensitivity_dbm: float = -120.0
    noise_floor_dbm: float = -140.0

    def distance(self, a: int, b: int) -> float:
        pa = np.asarray(self.positions[a], dtype=float)
        pb = np.asarray(self.positions[b], dtype=float)
        return float(np.linalg.norm(pa - pb))

    def path_loss_db(self, distance_m: float) -> float:
        d = max(distance_m, 1.0)
        return self.ref_loss_db_at_1m + 10.0 * self.pathloss_exponent * math.log10(d)

    def rssi_dbm(self, tx_power_dbm: float, a: int, b: int) -> float:
        return tx_power_dbm - self.path_loss_db(self.distance(a, b))

    def in_budget(self, tx_power_dbm: float, a: int, b: int) -> bool:
        return self.rssi_dbm(tx_power_dbm, a, b) >= self.sensitivity_dbm

    def propagation_s(self, a: int, b: int) -> float:
        return self.distance(a, b) / SPEED_OF_LIGHT


@dataclass
class Transmission:
    tx_id: int
    src: int
    freq: str
    start_s: float
    end_s: float
    preamble_end_s: float
    frame_bytes: Optional[bytes]
    tx_power_dbm: float
    collided: bool = False

    def overlaps(self, other: "Transmission") -> bool:
        return self.start_s < other.end_s and other.start_s < self.end_s


class RadioMedium:
    """Tracks in-flight transmissions and marks same-frequency overlaps."""

    def __init__(self, channel: ChannelModel):
        self.channel = channel
        self._active: List[Transmission] = []
        self._next_id = 0

    def begin(self, src: int, freq: str, start_s: float, airtime_s: float,
              preamble_s: float, frame_bytes: Optional[bytes],
              tx_power_dbm: float) -> Transmission:
        tx = Transmission(self._next_id, src, freq, start_s, start_s + airtime_s,
                          start_s + min(preamble_s, airtime_s), frame_bytes,
                          tx_power_dbm)
        self._next_id += 1
        for other in self._active:
            if other.freq == freq and other.overlaps(tx):
                other.collided = True
                tx.collided = True
        self._active.append(tx)
        return tx

    def finish(self, tx: Transmission) -> None:
        self._active.remove(tx)

    def cad_positive(self, listener: int, freq: str, at_s: float,
                     window_s: float) -> bool:
        """True if a detectable preamble overlaps the CAD window."""
        for tx in self._active:
            if tx.freq != freq or tx.src == listener:
                continue
            if tx.start_s < at_s + window_s and at_s < tx.preamble_end_s:
                if self.channel.in_budget(tx.tx_power_dbm, tx.src, listener):
                    return True
        return False


@dataclass
class RangingMeasurement:
    raw_distance_m: float
    corrected_distance_m: float
    observed_delta: float


def measure_ranging(channel: ChannelModel, master: int, slave: int,
                    t_b: float, delta: float, noise_sigma_s: float,
                    rng: random.Random, repeats: int = 10,
                    listeners: Sequence[int] = ()
                    ) -> Tuple[List[RangingMeasurement], Dict[int, float]]:
    """Simulate one batch of two-way exchanges plus passive observations.

    The master measures t_a = 2 d / c + (1 + delta) * t_b + eps and reads
    delta back through the frequency-error channel, so both raw and
    corrected distances are observable.  Each listener gets one averaged
    time difference per batch.
    """
    d = channel.distance(master, slave)
    measurements = []
    for _ in range(repeats):
        eps = rng.gauss(0.0, noise_sigma_s) if noise_sigma_s > 0 else 0.0
        t_a = 2.0 * d / SPEED_OF_LIGHT + (1.0 + delta) * t_b + eps
        raw = distance_from_tof(t_a, t_b)
        corr = corrected_distance(t_a, t_b, delta)
        measurements.append(RangingMeasurement(raw, corr, delta))

    pm = np.asarray(channel.positions[master], dtype=float)
    ps = np.asarray(channel.positions[slave], dtype=float)
    listener_dt: Dict[int, float] = {}
    for lid in listeners:
        pl = np.asarray(channel.positions[lid], dtype=float)
        t_ms = float(np.linalg.norm(ps - pm)) / SPEED_OF_LIGHT
        t_sl = float(np.linalg.norm(pl - ps)) / SPEED_OF_LIGHT
        t_ml = float(np.linalg.norm(pl - pm)) / SPEED_OF_LIGHT
        samples = []
        for _ in range(repeats):
            eps = rng.gauss(0.0, noise_sigma_s) if noise_sigma_s > 0 else 0.0
            samples.append(t_ms + t_sl - t_ml + eps)
        listener_dt[lid] = float(np.mean(samples))
    return measurements, listener_dt
