import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangesim import ranging
from rangesim.frame_codec import RadioConfig

T_B = ranging.T_B_SYMBOLS * RadioConfig(sf=8, bw_hz=1_625_000).symbol_duration_s


@given(st.floats(0.0, 1000.0), st.floats(-80e-6, 80e-6))
@settings(max_examples=500)
def test_forward_then_recover(distance, delta):
    t_a = ranging.simulate_round_trip(distance, T_B, delta)
    recovered = ranging.corrected_distance(t_a, T_B, delta)
    assert recovered == pytest.approx(distance, abs=1e-6)


@given(st.floats(35.0, 1000.0), st.floats(-80e-6, 80e-6))
@settings(max_examples=500)
def test_raw_minus_corrected_is_drift_error(distance, delta):
    # distance floor keeps the raw (uncorrected) estimate positive even
    # at the largest negative oscillator offset
    t_a = ranging.simulate_round_trip(distance, T_B, delta)
    raw = ranging.distance_from_tof(t_a, T_B)
    corrected = ranging.corrected_distance(t_a, T_B, delta)
    assert raw - corrected == pytest.approx(
        ranging.drift_error(delta, T_B), abs=1e-9)


def test_drift_error_magnitude_10ppm():
    assert ranging.drift_error(10e-6, T_B) == pytest.approx(4.01, abs=0.02)


def test_negative_tof_rejected():
    with pytest.raises(ranging.NegativeToF):
        ranging.distance_from_tof(T_B * 0.5, T_B)
    with pytest.raises(ranging.NegativeToF):
        ranging.corrected_distance(T_B * 0.5, T_B, 0.0)


def test_small_negative_corrected_tolerated():
    # timing noise may push the estimate slightly below zero
    t_a = ranging.simulate_round_trip(0.0, T_B, 0.0, noise_s=-1e-9)
    assert ranging.corrected_distance(t_a, T_B, 0.0) < 0.0


def test_timing_from_config():
    cfg = RadioConfig(sf=8, bw_hz=1_625_000)
    timing = ranging.RangingTiming.from_config(cfg)
    assert timing.t_s == pytest.approx(256 / 1_625_000)
    assert timing.t_d == pytest.approx(2 * timing.t_s)
    assert timing.t_b == pytest.approx(17 * timing.t_s)


def test_passive_delta_t_zero_at_slave():
    m, s = (0.0, 0.0), (120.0, 30.0)
    assert ranging.passive_delta_t(m, s, s) == pytest.approx(0.0, abs=1e-15)


def test_passive_delta_t_geometry():
    m, s, l = (0.0, 0.0), (100.0, 0.0), (50.0, 80.0)
    c = ranging.SPEED_OF_LIGHT
    expected = (100.0 + math.hypot(50.0, 80.0) - math.hypot(50.0, 80.0)) / c
    assert ranging.passive_delta_t(m, s, l) == pytest.approx(expected,
                                                             rel=1e-12)


def test_fit_calibration_recovers_line():
    rng = random.Random(3)
    xs = [rng.uniform(10, 400) for _ in range(50)]
    model = ranging.fit_calibration([(x, 0.97 * x + 4.2) for x in xs])
    assert model.slope == pytest.approx(0.97, abs=1e-9)
    assert model.intercept == pytest.approx(4.2, abs=1e-6)
    assert model.r_squared == pytest.approx(1.0, abs=1e-12)
    assert model.apply(100.0) == pytest.approx(101.2)


def test_fit_calibration_degenerate():
    with pytest.raises(ranging.DegenerateData):
        ranging.fit_calibration([(1.0, 1.0)])
    with pytest.raises(ranging.DegenerateData):
        ranging.fit_calibration([(5.0, 1.0), (5.0, 2.0)])


def test_noise_sigma_hits_target_r2():
    rng = np.random.default_rng(11)
    truths = rng.uniform(20, 400, size=2000)
    sigma = ranging.noise_sigma_for_r2(truths, 0.9945)
    noisy = truths + rng.normal(0.0, sigma, size=truths.size)
    model = ranging.fit_calibration(list(zip(noisy, truths)))
    assert model.r_squared == pytest.approx(0.9945, abs=0.003)


def test_noise_sigma_validation():
    with pytest.raises(ValueError):
        ranging.noise_sigma_for_r2([1.0, 2.0], 1.5)
    with pytest.raises(ranging.DegenerateData):
        ranging.noise_sigma_for_r2([7.0, 7.0], 0.99)


def test_simulate_round_trip_validation():
    with pytest.raises(ValueError):
        ranging.simulate_round_trip(-1.0, T_B)
