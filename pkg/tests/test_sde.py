import numpy as np
import pytest

import ltsm
from ltsm.errors import DivergenceError
from ltsm.sde import T_MIN, NoiseSchedule, forward_sample, reverse_step


def test_alpha_at_zero_is_one(sched):
    assert sched.alpha(0.0) == 1.0
    assert NoiseSchedule(5.0, 7.0).alpha(0.0) == 1.0


def test_alpha_closed_form_constant_beta():
    # beta(t) = 2 => alpha(1) = exp(-1)
    assert NoiseSchedule(2.0, 2.0).alpha(1.0) == pytest.approx(np.exp(-1.0), rel=1e-15)


def test_alpha_monotone_decreasing(sched):
    assert sched.alpha(0.5) > sched.alpha(0.9)
    ts = np.sort(np.random.default_rng(0).uniform(0, 1, 50))
    alphas = sched.alpha(ts)
    assert np.all(np.diff(alphas) < 0)
    assert np.all((alphas > 0) & (alphas <= 1))


def test_alpha_domain_error(sched):
    with pytest.raises(ValueError):
        sched.alpha(-0.1)
    with pytest.raises(ValueError):
        sched.alpha(1.1)


def test_alpha_deterministic(sched):
    assert sched.alpha(0.37) == sched.alpha(0.37)


def test_schedule_validation():
    with pytest.raises(ValueError):
        NoiseSchedule(-1.0, 2.0)
    with pytest.raises(ValueError):
        NoiseSchedule(3.0, 1.0)


def test_forward_zero_noise_path(sched):
    theta0 = np.array([1.5, -2.0])
    out = forward_sample(theta0, 0.4, sched, np.random.default_rng(0), eps=0.0)
    assert np.allclose(out, sched.alpha(0.4) * theta0, rtol=0, atol=0)


def test_forward_kernel_moments(sched):
    # empirical mean/variance of the exact kernel vs alpha*theta0, 1 - alpha^2
    n = 100_000
    t, theta0 = 0.4, 2.0
    alpha = sched.alpha(t)
    draws = forward_sample(np.full((n, 1), theta0), t, sched, np.random.default_rng(7))
    var = 1.0 - alpha**2
    se_mean = np.sqrt(var / n)
    se_var = var * np.sqrt(2.0 / (n - 1))
    assert abs(draws.mean() - alpha * theta0) < 4 * se_mean
    assert abs(draws.var() - var) < 4 * se_var


def test_forward_deterministic_with_seed(sched):
    a = forward_sample(np.ones(3), 0.5, sched, np.random.default_rng(42))
    b = forward_sample(np.ones(3), 0.5, sched, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_forward_time_domain(sched):
    with pytest.raises(ValueError):
        forward_sample(np.ones(1), 0.0, sched, np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward_sample(np.ones(1), 1.2, sched, np.random.default_rng(0))


def test_reverse_step_frozen_dynamics():
    frozen = NoiseSchedule(0.0, 0.0)
    state = np.array([1.0, -0.5])
    out = reverse_step(state, 0.8, 0.1, np.zeros(2), frozen, np.random.default_rng(0))
    assert np.array_equal(out, state)  # beta = 0 kills drift and noise


def test_reverse_step_drift_by_hand():
    # theta' = 1 - (-1/2 * 2 * 1) * 0.01 = 1.01 with zero score and noise
    out = reverse_step(np.array([1.0]), 0.5, 0.01, np.array([0.0]), NoiseSchedule(2.0, 2.0),
                       np.random.default_rng(0), eps=0.0)
    assert out[0] == pytest.approx(1.01, rel=1e-14)


def test_reverse_step_zero_noise_is_euler_drift(sched):
    rng = np.random.default_rng(3)
    theta = rng.standard_normal(4)
    score = rng.standard_normal(4)
    t, dt = 0.6, 0.02
    beta = sched.beta(t)
    expected = theta - (-0.5 * beta * theta - beta * score) * dt
    out = reverse_step(theta, t, dt, score, sched, rng, eps=0.0)
    assert np.array_equal(out, expected)


def test_reverse_step_preconditions(sched):
    with pytest.raises(ValueError):
        reverse_step(np.ones(1), 0.5, -0.1, np.zeros(1), sched, np.random.default_rng(0))
    with pytest.raises(ValueError):
        reverse_step(np.ones(1), T_MIN, 0.5, np.zeros(1), sched, np.random.default_rng(0))
    with pytest.raises(DivergenceError):
        reverse_step(np.ones(1), 0.5, 0.01, np.array([np.inf]), sched, np.random.default_rng(0))


def test_full_reverse_pass_with_analytic_score(sched):
    # integrating the reverse SDE with the exact conditional score must land
    # on the conjugate posterior N(x/3, 2/3)
    x, n, n_steps = 3.0, 40_000, 400
    rng = np.random.default_rng(9)
    theta = rng.standard_normal((n, 1))
    ts = np.linspace(1.0, T_MIN, n_steps + 1)
    for k in range(n_steps):
        score = ltsm.gaussian_true_score(theta, ts[k], x, sched)
        theta = reverse_step(theta, ts[k], ts[k] - ts[k + 1], score, sched, rng)
    se_mean = np.sqrt(2.0 / 3.0 / n)
    se_var = (2.0 / 3.0) * np.sqrt(2.0 / (n - 1))
    assert abs(theta.mean() - 1.0) < 4 * se_mean + 0.01  # + O(dt) discretization slack
    assert abs(theta.var() - 2.0 / 3.0) < 4 * se_var + 0.01
