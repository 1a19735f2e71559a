import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aflsim import env
from aflsim.env import EnvConfig, VehicleState

from oracles import j0_series, ref_distance, ref_rate

CFG = EnvConfig()


def vehicle(d_ix=0.0, h=1.0 + 0j, mu=1e9, D=1000):
    return VehicleState(0, d_ix, h, mu, D)


# -- geometry ------------------------------------------------------------------

def test_distance_examples():
    assert env.distance(vehicle(0.0), CFG) == pytest.approx(math.sqrt(125), abs=1e-12)
    assert env.distance(vehicle(0.0), CFG) == pytest.approx(11.1803, abs=1e-4)
    assert env.distance(vehicle(-10.0), CFG) == pytest.approx(15.0, abs=1e-12)


def test_cos_theta_examples():
    assert env.cos_theta(vehicle(-10.0), CFG) == pytest.approx(2 / 3, abs=1e-15)
    assert env.cos_theta(vehicle(30.0), CFG) < 0


def test_doppler_example():
    assert env.doppler(vehicle(-10.0), CFG) == pytest.approx(20 / 7 * 2 / 3, abs=1e-12)
    assert env.doppler(vehicle(-10.0), CFG) == pytest.approx(1.904762, abs=1e-6)


def test_doppler_is_zero_broadside():
    assert env.doppler(vehicle(0.0), CFG) == 0.0


@settings(max_examples=100)
@given(x=st.floats(-1e4, 1e4), y=st.floats(-1e4, 1e4))
def test_distance_monotone_and_bounded(x, y):
    d1, d2 = env.distance(vehicle(x), CFG), env.distance(vehicle(y), CFG)
    assert d1 >= math.sqrt(CFG.H_r ** 2 + CFG.d_y ** 2)
    if abs(x) < abs(y):
        assert d1 <= d2
    c = env.cos_theta(vehicle(x), CFG)
    assert -1 <= c <= 1
    assert math.copysign(1, env.doppler(vehicle(x), CFG)) == math.copysign(1, c) or c == 0


# -- Bessel --------------------------------------------------------------------

def test_j0_known_values():
    assert env.bessel_j0(0.0) == 1.0
    assert env.bessel_j0(1.0) == pytest.approx(0.7651976866, abs=1e-10)
    assert abs(env.bessel_j0(2.404826)) < 1e-6


def test_j0_oracle_against_thirty_term_series():
    assert env.bessel_j0(1.0) == pytest.approx(j0_series(1.0, terms=30), abs=1e-12)


@settings(max_examples=100)
@given(x=st.floats(-50, 50))
def test_j0_is_even_and_bounded(x):
    assert env.bessel_j0(-x) == env.bessel_j0(x)
    assert abs(env.bessel_j0(x)) <= 1.0


def test_j0_branches_meet_at_switch_point():
    below = env.bessel_j0(np.nextafter(8.0, 0.0))
    above = env.bessel_j0(8.0)
    assert abs(below - above) < 1e-8


def test_correlation_rho():
    assert env.correlation_rho(0.0, 0.5) == 1.0
    assert env.correlation_rho(2.404826 / (2 * math.pi * 0.5), 0.5) == pytest.approx(0.0, abs=1e-6)


# -- rate and delays -------------------------------------------------------------

def test_rate_example():
    rate = env.transmission_rate(vehicle(0.0), CFG)
    assert rate == pytest.approx(1000 * math.log2(1 + 2e9), rel=1e-12)
    assert rate == pytest.approx(30897.35, abs=0.01)
    assert env.transmission_rate(vehicle(0.0, h=0j), CFG) == 0.0


def test_rate_uses_squared_gain_magnitude():
    a = env.transmission_rate(vehicle(0.0, h=(0.6 + 0.8j)), CFG)
    assert a == pytest.approx(env.transmission_rate(vehicle(0.0), CFG), rel=1e-14)


@settings(max_examples=60)
@given(x=st.floats(0, 240), dx=st.floats(1e-3, 10))
def test_rate_strictly_decreasing_in_distance(x, dx):
    assert env.transmission_rate(vehicle(x + dx), CFG) < env.transmission_rate(vehicle(x), CFG)


def test_training_delay_examples():
    assert env.local_training_delay(vehicle(D=1000, mu=2e9), CFG) == 0.5
    assert env.local_training_delay(vehicle(D=1000, mu=4e9), CFG) == 0.25
    with pytest.raises(ValueError):
        env.local_training_delay(vehicle(D=0), CFG)


def test_upload_delay_examples():
    t = env.upload_delay(vehicle(0.0), CFG)
    assert t == pytest.approx(5000 / 30897.35, rel=1e-6)
    assert t == pytest.approx(0.16183, abs=1e-5)
    assert env.upload_delay(vehicle(0.0), replace(CFG, model_size_bits=0)) == 0.0
    assert env.upload_delay(vehicle(0.0, h=0j), CFG) == math.inf


def test_upload_delay_halves_when_rate_doubles():
    v = vehicle(0.0)
    r = env.transmission_rate(v, CFG)
    # choose a bandwidth that doubles the rate
    doubled = replace(CFG, B=2 * CFG.B)
    assert env.transmission_rate(v, doubled) == pytest.approx(2 * r, rel=1e-14)
    assert env.upload_delay(v, doubled) == pytest.approx(env.upload_delay(v, CFG) / 2, rel=1e-14)


def test_max_rate_matches_closest_point():
    assert CFG.max_rate == pytest.approx(env.transmission_rate(vehicle(0.0), CFG), rel=1e-14)


@settings(max_examples=60)
@given(x=st.floats(-250, 250), re=st.floats(-3, 3), im=st.floats(-3, 3))
def test_rate_matches_straight_line_formula(x, re, im):
    v = vehicle(x, h=complex(re, im))
    d = ref_distance(x, CFG.d_y, CFG.H_r)
    assert env.transmission_rate(v, CFG) == pytest.approx(
        ref_rate(CFG.B, CFG.p0, complex(re, im), d, CFG.alpha, CFG.sigma2), rel=1e-12, abs=1e-9)


# -- fleet dynamics ----------------------------------------------------------------

def test_reset_examples():
    a, b = env.reset(CFG, 4), env.reset(CFG, 4)
    assert a == b
    assert len(a) == 5
    lo, hi = CFG.coverage_x
    for v in a:
        assert lo <= v.d_ix <= hi
        assert CFG.compute_dist.lo <= v.mu <= CFG.compute_dist.hi
        assert CFG.data_size_range[0] <= v.D <= CFG.data_size_range[1]
    assert [v.is_bad for v in env.reset(CFG, 4, bad=[1])] == [False, True, False, False, False]


def test_advance_moves_ten_metres():
    fleet = [replace(v, d_ix=0.0) for v in env.reset(CFG, 1)]
    moved = env.advance_slot(fleet, CFG, 2)
    assert all(m.d_ix == 10.0 for m in moved)


def test_advance_wraps_to_coverage_start():
    fleet = [replace(env.reset(CFG, 1)[0], d_ix=245.0)]
    (moved,) = env.advance_slot(fleet, CFG, 0)
    assert moved.d_ix == pytest.approx(-245.0)


def test_advance_preserves_fleet_size_and_order():
    fleet = env.reset(CFG, 3)
    for t in range(60):
        fleet = env.advance_slot(fleet, CFG, t)
    assert [v.index for v in fleet] == list(range(CFG.K))
    assert all(CFG.coverage_x[0] <= v.d_ix <= CFG.coverage_x[1] for v in fleet)


def test_gain_unchanged_with_full_correlation():
    rng = np.random.default_rng(0)
    assert env.evolve_gain(0.3 - 0.2j, 1.0, rng) == 0.3 - 0.2j


def test_gain_redrawn_with_zero_correlation():
    rng = np.random.default_rng(0)
    draws = np.array([env.evolve_gain(5.0 + 5.0j, 0.0, rng) for _ in range(10_000)])
    power = np.abs(draws) ** 2
    # |h|^2 of a unit complex Gaussian is Exp(1): mean 1, variance 1
    assert power.mean() == pytest.approx(1.0, abs=0.05)
    assert power.var() == pytest.approx(1.0, abs=0.1)


def test_delays_positive_and_finite():
    fleet = env.reset(CFG, 8)
    for t in range(20):
        t_l, t_u = env.delays(fleet, CFG)
        assert np.all(t_l > 0) and np.all(np.isfinite(t_l))
        ok = np.array([env.transmission_rate(v, CFG) > 0 for v in fleet])
        assert np.all(t_u[ok] > 0) and np.all(np.isfinite(t_u[ok]))
        fleet = env.advance_slot(fleet, CFG, t)


def test_compute_scale_survives_advance():
    fleet = [replace(v, compute_scale=0.1) for v in env.reset(CFG, 0)]
    moved = env.advance_slot(fleet, CFG, 1)
    assert all(v.mu <= 0.1 * CFG.compute_dist.hi for v in moved)


def test_env_config_validation():
    assert CFG.validate() == []
    bad = replace(CFG, slot_duration_s=0, sigma2=0, coverage_x=(5, -5))
    assert len(bad.validate()) == 3
