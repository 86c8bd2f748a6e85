import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsegreedy.lasso import (
    LassoConvergenceError,
    LassoState,
    kkt_residual,
    lambda_schedule,
    objective,
    soft_threshold,
    solve,
)
from sparsegreedy.model import random_sparse_parameter

# independent evaluation of 4 sqrt(0.1) sqrt((4 log 100 + 2 log 10) / 100)
LAMBDA_T100_D10 = 0.6069708517540586
# 95% quantile of ||beta_hat - beta*||_1 over 100 seeds was 0.314 (t=2000, d=10, s0=2, var 0.1)
RECOVERY_L1_THRESHOLD = 0.35


def random_instance(rng, d, t, sparse=True):
    beta = np.zeros(d)
    k = max(1, d // 5) if sparse else d
    beta[rng.choice(d, k, replace=False)] = rng.normal(size=k)
    X = rng.normal(size=(t, d))
    r = X @ beta + 0.3 * rng.normal(size=t)
    return X, r


def test_lambda_examples():
    assert lambda_schedule(1, 1, 1.0, 1.0) == 0.0
    assert math.isclose(lambda_schedule(100, 10, 1.0, math.sqrt(0.1)), LAMBDA_T100_D10, rel_tol=1e-12)
    with pytest.raises(ValueError):
        lambda_schedule(0, 10, 1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 10**6), st.integers(1, 1000))
def test_lambda_decreases_when_t_doubles(t, d):
    assert lambda_schedule(2 * t, d, 1.0, 1.0) < lambda_schedule(t, d, 1.0, 1.0)


def test_soft_threshold_values():
    assert np.array_equal(soft_threshold(np.array([3.0, -3.0, 0.5]), 1.0), [2.0, -2.0, 0.0])


@pytest.mark.parametrize("rbar,lam", [(0.8, 0.4), (-0.8, 0.4), (0.1, 0.4), (2.5, 0.0)])
def test_one_dimensional_closed_form(rbar, lam, rng):
    t = 40
    r = rbar + rng.normal(size=t)
    r += rbar - r.mean()
    state = LassoState.from_samples(np.ones((t, 1)), r, lam=lam).fit()
    # stationarity of (1/t) sum (r - b)^2 + lam |b| with unit design
    assert abs(state.beta_hat[0] - soft_threshold(r.mean(), lam / 2)) < 1e-10


def test_kkt_on_random_instances():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 51))
        t = int(rng.integers(1, 501))
        X, r = random_instance(rng, d, t)
        state = LassoState.from_samples(X, r, sigma=0.3).fit()
        worst = max(worst, state.kkt_residual())
    assert worst <= 1e-6


def test_ols_when_lambda_zero(rng):
    X, r = random_instance(rng, 8, 200, sparse=False)
    state = LassoState.from_samples(X, r, lam=0.0).fit(tol=1e-14, max_sweeps=100_000)
    oracle = np.linalg.solve(X.T @ X, X.T @ r)
    assert np.max(np.abs(state.beta_hat - oracle)) < 1e-8


def test_large_lambda_gives_zero(rng):
    X, r = random_instance(rng, 6, 50)
    c = X.T @ r / 50
    state = LassoState.from_samples(X, r, lam=2 * np.abs(c).max() * 1.0001).fit()
    assert np.all(state.beta_hat == 0)
    state = LassoState.from_samples(X, r, lam=2 * np.abs(c).max() * 0.9).fit()
    assert np.any(state.beta_hat != 0)


def test_objective_monotone_across_sweeps(rng):
    for _ in range(20):
        X, r = random_instance(rng, 30, 60)
        A, c = X.T @ X / 60, X.T @ r / 60
        beta, sweeps, hist = solve(A, c, 0.05, record=True)
        assert np.all(np.diff(hist) <= 1e-12 * np.maximum(1.0, np.abs(hist[1:])))
        assert math.isclose(hist[-1], objective(A, c, 0.05, beta), rel_tol=1e-9, abs_tol=1e-12)


def test_objective_matches_squared_loss(rng):
    X, r = random_instance(rng, 5, 30)
    beta = rng.normal(size=5)
    direct = np.mean((r - X @ beta) ** 2) + 0.2 * np.abs(beta).sum()
    assert math.isclose(objective(X.T @ X / 30, X.T @ r / 30, 0.2, beta, const=np.mean(r**2)), direct, rel_tol=1e-10)


def test_incremental_matches_batch(rng):
    X, r = random_instance(rng, 6, 10)
    inc = LassoState(6, sigma=0.3)
    for x, y in zip(X, r):
        inc.add(x, y)
    batch = LassoState.from_samples(X, r, sigma=0.3)
    assert np.allclose(inc.xtx, batch.xtx, rtol=0, atol=1e-12) and np.allclose(inc.xtr, batch.xtr, rtol=0, atol=1e-12)
    assert inc.n_samples == 10 and inc.lam == batch.lam


def test_single_update_equals_fresh_fit(rng):
    x, y = rng.normal(size=4), 0.7
    a = LassoState(4, sigma=0.3, lam=0.01).update(x, y)
    b = LassoState.from_samples(x[None, :], [y], sigma=0.3, lam=0.01).fit(warm_start=False)
    assert np.allclose(a.beta_hat, b.beta_hat, atol=1e-12)


def test_warm_and_cold_agree(rng):
    X, r = random_instance(rng, 20, 300)
    state = LassoState(20, sigma=0.3)
    for x, y in zip(X, r):
        state.update(x, y)
    cold = state.copy().fit(warm_start=False)
    assert np.max(np.abs(state.beta_hat - cold.beta_hat)) < 1e-6


def test_zero_samples_estimate_is_zero():
    state = LassoState(3)
    assert np.array_equal(state.beta_hat, np.zeros(3))
    with pytest.raises(ValueError):
        state.fit()


def test_degenerate_coordinate_pinned(rng):
    X, r = random_instance(rng, 4, 50)
    X[:, 2] = 0.0
    state = LassoState.from_samples(X, r, lam=0.01).fit()
    assert state.beta_hat[2] == 0.0
    assert state.kkt_residual() <= 1e-6


def test_non_convergence_carries_iterate(rng):
    X, r = random_instance(rng, 30, 40)
    X[:, 1] = X[:, 0] + 1e-3 * rng.normal(size=40)
    with pytest.raises(LassoConvergenceError) as info:
        LassoState.from_samples(X, r, lam=1e-4).fit(max_sweeps=2)
    err = info.value
    assert err.beta.shape == (30,) and err.kkt_residual > 0


def test_kkt_residual_detects_non_optimum(rng):
    X, r = random_instance(rng, 5, 80)
    A, c = X.T @ X / 80, X.T @ r / 80
    beta, _ = solve(A, c, 0.1)
    assert kkt_residual(A, c, 0.1, beta) < 1e-6
    assert kkt_residual(A, c, 0.1, beta + 0.1) > 1e-3


def test_support_recovery_golden():
    errors = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        beta = random_sparse_parameter(10, 2, rng).entries
        X = rng.uniform(size=(2000, 10))
        r = X @ beta + math.sqrt(0.1) * rng.standard_normal(2000)
        est = LassoState.from_samples(X, r, x_max=1.0, sigma=math.sqrt(0.1)).fit().beta_hat
        errors.append(np.abs(est - beta).sum())
    assert np.mean(np.array(errors) <= RECOVERY_L1_THRESHOLD) >= 0.95
