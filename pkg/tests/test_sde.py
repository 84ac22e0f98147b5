import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mothnet.sde import (
    IntegrationError,
    SdeParams,
    SigmoidParams,
    euler_maruyama_step,
    make_rng,
    sigmoid,
    simulate_window,
)

UNIT = SigmoidParams(1.0, 1.0, 0.0)


def test_sigmoid_midpoint_and_saturation():
    assert sigmoid(0.3, SigmoidParams(1.0, 7.0, 0.3)) == 0.5
    assert sigmoid(1e6, SigmoidParams(2.5, 1.0, 0.0)) == 2.5
    assert 0.0 <= sigmoid(-1e6, UNIT) < 1e-300


def test_sigmoid_matches_high_precision_logistic():
    mpmath.mp.dps = 50
    expected = float(1 / (1 + mpmath.exp(-2)))
    assert sigmoid(2.0 + 0.7, SigmoidParams(1.0, 1.0, 0.7)) == pytest.approx(expected, rel=1e-15)
    for x in np.linspace(-30, 30, 61):
        ref = float(3 / (1 + mpmath.exp(-mpmath.mpf(0.5) * (mpmath.mpf(x) - 1))))
        assert sigmoid(x, SigmoidParams(3.0, 0.5, 1.0)) == pytest.approx(ref, rel=1e-13)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3),
       st.floats(0.01, 50), st.floats(0.1, 10), st.floats(-5, 5))
def test_sigmoid_bounded_and_monotone(a, b, slope, top, offset):
    p = SigmoidParams(top, slope, offset)
    lo, hi = sorted((a, b))
    assert 0.0 <= sigmoid(lo, p) <= sigmoid(hi, p) <= top


def test_step_examples():
    drive_for_one = np.array([1e3])  # S = 1 to double precision
    x = euler_maruyama_step(np.zeros(1), drive_for_one, SdeParams(1.0, 0.1), UNIT)
    assert x[0] == pytest.approx(0.1, abs=1e-15)
    for dt, tau in ((0.01, 1.0), (0.3, 2.0)):
        x = euler_maruyama_step(np.ones(1), drive_for_one, SdeParams(tau, dt), UNIT)
        assert x[0] == 1.0


def test_step_rejects_bad_drive():
    with pytest.raises(IntegrationError):
        euler_maruyama_step(np.zeros(2), np.array([0.0, np.nan]), SdeParams(), UNIT)
    with pytest.raises(IntegrationError):
        euler_maruyama_step(np.zeros(2), np.zeros(3), SdeParams(), UNIT)


def test_params_validation():
    with pytest.raises(ValueError):
        SdeParams(tau=1.0, dt=1.0)
    with pytest.raises(ValueError):
        SdeParams(noise_amplitude=-0.1)
    with pytest.raises(ValueError):
        SigmoidParams(slope=0.0)


def test_noise_std_matches_wiener_increment():
    # At the fixed point the deterministic part vanishes and the clamp never
    # acts, so x' - x is exactly the noise term.
    n = 100_000
    params = SdeParams(1.0, 0.01, 0.5)
    x = euler_maruyama_step(np.ones(n), np.full(n, 1e3), params, UNIT, make_rng(11))
    std = np.std(x - 1.0, ddof=1)
    assert abs(std - 0.5 * math.sqrt(0.01)) / 0.05 < 0.02
    var = np.var(x - 1.0, ddof=1)
    assert abs(var - 0.5 ** 2 * 0.01) / (0.5 ** 2 * 0.01) < 0.02


def test_noise_variance_under_zero_drive():
    # zero drive with offset 0 gives S = 0.5; start there
    n = 200_000
    params = SdeParams(1.0, 0.05, 0.2)
    x = euler_maruyama_step(np.full(n, 0.5), np.zeros(n), params, UNIT, make_rng(3))
    assert abs(np.var(x - 0.5, ddof=1) / (0.2 ** 2 * 0.05) - 1) < 0.02


def test_zero_noise_equilibrium_monotone():
    params = SdeParams(1.0, 0.05, 0.0)
    sig = SigmoidParams(1.0, 4.0, 0.2)
    drive = np.array([-1.0, 0.0, 0.2, 0.9, 3.0])
    target = sigmoid(drive, sig)
    traj = simulate_window(np.array([0.9, 0.0, 0.1, 1.0, 0.2]), lambda t, x: drive,
                           20.0 * params.tau, params, sig)
    assert np.max(np.abs(traj[-1] - target)) < 1e-6
    gap = np.abs(traj - target)
    assert np.all(np.diff(gap, axis=0) <= 1e-15)


def test_window_length_and_determinism():
    params = SdeParams(1.0, 0.05, 0.3)
    traj = simulate_window(np.zeros(4), lambda t, x: np.zeros(4), 3 * 0.05, params, UNIT,
                           make_rng(5))
    assert traj.shape == (4, 4)
    assert np.all(traj[0] == 0)
    again = simulate_window(np.zeros(4), lambda t, x: np.zeros(4), 3 * 0.05, params, UNIT,
                            make_rng(5))
    assert np.array_equal(traj, again)
    with pytest.raises(ValueError):
        simulate_window(np.zeros(1), lambda t, x: np.zeros(1), 0.01, params, UNIT, make_rng(0))


def test_noise_requires_generator():
    with pytest.raises(ValueError):
        euler_maruyama_step(np.zeros(1), np.zeros(1), SdeParams(noise_amplitude=0.1), UNIT)


@settings(max_examples=200)
@given(st.integers(0, 2 ** 32), st.floats(0.0, 3.0), st.floats(-5, 5))
def test_rates_never_negative(seed, noise, drive):
    params = SdeParams(1.0, 0.05, noise)
    traj = simulate_window(np.zeros(6), lambda t, x: np.full(6, drive), 1.0, params, UNIT,
                           make_rng(seed))
    assert np.all(traj >= 0) and np.all(np.isfinite(traj))


def test_generator_is_pcg64_and_splittable():
    rng = make_rng(42)
    assert isinstance(rng.bit_generator, np.random.PCG64)
    a, b = np.random.SeedSequence(42).spawn(2)
    assert make_rng(a).random() != make_rng(b).random()
    assert make_rng(a).random() == make_rng(np.random.SeedSequence(42).spawn(2)[0]).random()
