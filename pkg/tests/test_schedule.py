"""Noise schedule and forward-diffusion checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcmrecon.cloud import (
    ColoredPointCloud,
    NoiseSchedule,
    make_linear_schedule,
    q_sample,
    q_sample_state,
)


def test_single_step_schedule():
    s = make_linear_schedule(1, 0.5, 0.5)
    assert s.betas.tolist() == [0.5]
    assert s.alpha_bars.tolist() == [0.5]


def test_two_step_product():
    s = make_linear_schedule(2, 0.1, 0.1)
    np.testing.assert_allclose(s.alpha_bars, [0.9, 0.81], rtol=0, atol=1e-15)


def test_reference_schedule_against_extended_precision_oracle():
    """Cumulative product at T=256 checked against a long-double loop."""
    s = make_linear_schedule(256, 1e-4, 0.02)
    betas = np.linspace(1e-4, 0.02, 256, dtype=np.longdouble)
    prod = np.longdouble(1.0)
    oracle = np.empty(256)
    for t, b in enumerate(betas):
        prod *= np.longdouble(1.0) - b
        oracle[t] = float(prod)
    np.testing.assert_allclose(s.alpha_bars, oracle, rtol=1e-13)
    # Frozen endpoint from the same oracle, guarding against silent drift.
    assert s.alpha_bars[255] == pytest.approx(0.075008049429065, rel=1e-12)


def test_alpha_bar_boundary_is_one():
    s = make_linear_schedule(8, 1e-3, 0.2)
    assert s.alpha_bar(0) == 1.0
    assert s.alpha_bar(8) == s.alpha_bars[7]
    with pytest.raises(ValueError):
        s.alpha_bar(9)
    with pytest.raises(ValueError):
        s.alpha_bar(-1)


@given(
    t_steps=st.integers(min_value=1, max_value=64),
    b_lo=st.floats(min_value=1e-5, max_value=0.3),
    spread=st.floats(min_value=0.0, max_value=0.4),
)
@settings(max_examples=60, deadline=None)
def test_schedule_monotone_strictly_decreasing(t_steps, b_lo, spread):
    s = make_linear_schedule(t_steps, b_lo, min(b_lo + spread, 0.7))
    assert np.all(np.diff(s.alpha_bars) < 0) or t_steps == 1
    assert np.all(s.alpha_bars > 0)
    assert np.all(s.alpha_bars < 1)


def test_schedule_validation():
    with pytest.raises(ValueError):
        make_linear_schedule(0, 0.1, 0.2)
    with pytest.raises(ValueError):
        make_linear_schedule(4, 0.0, 0.2)
    with pytest.raises(ValueError):
        make_linear_schedule(4, 0.3, 0.2)
    with pytest.raises(ValueError):
        make_linear_schedule(4, 0.1, 1.0)
    # Inconsistent alpha_bars are rejected by the constructor itself.
    with pytest.raises(ValueError):
        NoiseSchedule(betas=np.array([0.1, 0.1]), alpha_bars=np.array([0.9, 0.5]))


def test_q_sample_identity_at_alpha_bar_one():
    s = make_linear_schedule(4, 0.1, 0.2)
    x0 = np.array([1.0, -2.0, 3.0])
    noise = np.array([5.0, 5.0, 5.0])
    out = q_sample_state(x0, 0, noise, s)
    np.testing.assert_array_equal(out, x0)


def test_q_sample_scalar_value():
    # sqrt(0.25)*1 + sqrt(0.75)*1
    s = NoiseSchedule(betas=np.array([0.75]), alpha_bars=np.array([0.25]))
    out = q_sample_state(np.array([1.0]), 1, np.array([1.0]), s)
    assert out[0] == pytest.approx(1.3660254037844386, abs=1e-15)


@given(
    a=st.floats(min_value=-3, max_value=3),
    b=st.floats(min_value=-3, max_value=3),
    seed=st.integers(min_value=0, max_value=2**31),
)
@settings(max_examples=60, deadline=None)
def test_q_sample_affine_in_noise(a, b, seed):
    rng = np.random.default_rng(seed)
    s = make_linear_schedule(6, 1e-3, 0.3)
    x0 = rng.standard_normal(5)
    n1 = rng.standard_normal(5)
    n2 = rng.standard_normal(5)
    t = int(rng.integers(1, 7))
    lhs = q_sample_state(x0, t, a * n1 + b * n2, s)
    root = np.sqrt(s.alpha_bar(t))
    rhs = (
        a * q_sample_state(x0, t, n1, s)
        + b * q_sample_state(x0, t, n2, s)
        - (a + b - 1.0) * root * x0
    )
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_q_sample_monte_carlo_mean():
    """Mean over noise draws lands on sqrt(abar)*X0 within 4 standard errors."""
    rng = np.random.default_rng(42)
    s = make_linear_schedule(10, 1e-3, 0.3)
    x0 = np.array([0.7, -1.2])
    t = 7
    draws = np.array([q_sample_state(x0, t, rng.standard_normal(2), s) for _ in range(10_000)])
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    target = np.sqrt(s.alpha_bar(t)) * x0
    assert np.all(np.abs(mean - target) <= 4.0 * se)


def test_q_sample_wraps_clouds():
    rng = np.random.default_rng(3)
    cloud = ColoredPointCloud(rng.standard_normal((4, 3)), rng.uniform(0, 1, (4, 3)))
    s = make_linear_schedule(5, 1e-3, 0.2)
    noise = rng.standard_normal(cloud.state_dim(4, 3))
    noisy = q_sample(cloud, 3, noise, s)
    expect = q_sample_state(cloud.state(), 3, noise, s)
    np.testing.assert_array_equal(noisy.state(), expect)
