"""L1-regularized least squares with cyclic coordinate descent.

The objective is ``(1/t) sum_s (r_s - x_s^T beta)^2 + lam * ||beta||_1``:
the quadratic is averaged but not halved, so in terms of
``A = xtx / t`` and ``c = xtr / t`` it reads
``beta^T A beta - 2 c^T beta + lam ||beta||_1 + const`` and the coordinate
update is ``beta_j = soft(rho_j, lam / 2) / A_jj``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

TOL = 1e-9
MAX_SWEEPS = 10_000


class LassoConvergenceError(RuntimeError):
    def __init__(self, message, beta, kkt_residual, round=None):
        super().__init__(message)
        self.beta = beta
        self.kkt_residual = kkt_residual
        self.round = round


def lambda_schedule(t: int, d: int, x_max: float, sigma: float) -> float:
    """Regularization ``4 x_max sigma sqrt((4 log t + 2 log d) / t)``."""
    if t < 1:
        raise ValueError("lambda is undefined at t = 0; the estimator is the zero vector")
    return 4.0 * x_max * sigma * math.sqrt((4.0 * math.log(t) + 2.0 * math.log(d)) / t)


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


@njit(cache=True)
def _cd_kernel(A, c, lam, beta, tol, max_sweeps, history):
    """Cyclic coordinate descent, in place on ``beta``.

    Returns (sweeps, last max change). When ``history`` has length
    max_sweeps + 1 the objective is written after every sweep.
    """
    d = beta.shape[0]
    record = history.shape[0] > 0
    grad = np.empty(d)
    # grad_j = (A beta)_j, kept up to date across coordinate moves
    for j in range(d):
        s = 0.0
        for k in range(d):
            s += A[j, k] * beta[k]
        grad[j] = s
    if record:
        obj = 0.0
        for j in range(d):
            obj += beta[j] * grad[j] - 2.0 * c[j] * beta[j] + lam * abs(beta[j])
        history[0] = obj
    half = 0.5 * lam
    delta = 0.0
    for sweep in range(max_sweeps):
        delta = 0.0
        for j in range(d):
            ajj = A[j, j]
            old = beta[j]
            if ajj <= 0.0:
                new = 0.0
            else:
                rho = c[j] - (grad[j] - ajj * old)
                if rho > half:
                    new = (rho - half) / ajj
                elif rho < -half:
                    new = (rho + half) / ajj
                else:
                    new = 0.0
            step = new - old
            if step != 0.0:
                beta[j] = new
                for k in range(d):
                    grad[k] += A[k, j] * step
                if abs(step) > delta:
                    delta = abs(step)
        if record:
            obj = 0.0
            for j in range(d):
                obj += beta[j] * grad[j] - 2.0 * c[j] * beta[j] + lam * abs(beta[j])
            history[sweep + 1] = obj
        if delta < tol:
            return sweep + 1, delta
    return max_sweeps, delta


def objective(A, c, lam, beta, const=0.0) -> float:
    """Objective in normalized form; ``const`` is ``mean(r^2)`` for the exact value."""
    beta = np.asarray(beta, dtype=float)
    return float(beta @ A @ beta - 2.0 * c @ beta + lam * np.abs(beta).sum() + const)


def kkt_residual(A, c, lam, beta) -> float:
    """Largest subgradient-optimality violation over coordinates."""
    beta = np.asarray(beta, dtype=float)
    g = 2.0 * (A @ beta - c)
    zero = beta == 0
    viol = np.where(zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(g + lam * np.sign(beta)))
    # degenerate coordinates (never observed) are pinned at zero
    viol = np.where(np.diag(A) <= 0, 0.0, viol)
    return float(viol.max()) if viol.size else 0.0


def solve(A, c, lam, beta0=None, tol=TOL, max_sweeps=MAX_SWEEPS, record=False):
    """Minimize ``beta^T A beta - 2 c^T beta + lam ||beta||_1``.

    Returns ``(beta, sweeps)`` or, with ``record=True``,
    ``(beta, sweeps, objective_history)``.
    """
    A = np.ascontiguousarray(A, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    d = c.size
    beta = np.zeros(d) if beta0 is None else np.array(beta0, dtype=float)
    beta[np.diag(A) <= 0] = 0.0
    history = np.empty(max_sweeps + 1 if record else 0)
    sweeps, delta = _cd_kernel(A, c, float(lam), beta, tol, max_sweeps, history)
    if delta >= tol:
        raise LassoConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps (last change {delta:.3g})",
            beta,
            kkt_residual(A, c, lam, beta),
        )
    if record:
        return beta, sweeps, history[: sweeps + 1].copy()
    return beta, sweeps


class LassoState:
    """Running sufficient statistics and the current estimate.

    ``update`` and ``fit`` mutate the state and return it, so calls chain.
    The estimate at ``n_samples == 0`` is the zero vector.
    """

    def __init__(self, d: int, x_max: float = 1.0, sigma: float = 1.0, lam: float | None = None):
        self.d = d
        self.x_max = x_max
        self.sigma = sigma
        self.fixed_lambda = lam
        self.xtx = np.zeros((d, d))
        self.xtr = np.zeros(d)
        self.n_samples = 0
        self.beta_hat = np.zeros(d)
        self.lam = lam if lam is not None else 0.0
        self.sweeps = 0

    @classmethod
    def from_samples(cls, X, r, **kw) -> "LassoState":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = np.asarray(r, dtype=float).ravel()
        state = cls(X.shape[1], **kw)
        state.xtx = X.T @ X
        state.xtr = X.T @ r
        state.n_samples = X.shape[0]
        state._refresh_lambda()
        return state

    def _refresh_lambda(self):
        if self.fixed_lambda is not None:
            self.lam = self.fixed_lambda
        elif self.n_samples >= 1:
            self.lam = lambda_schedule(self.n_samples, self.d, self.x_max, self.sigma)

    @property
    def gram(self) -> np.ndarray:
        """Empirical Gram matrix ``xtx / n_samples``."""
        if self.n_samples == 0:
            return np.zeros((self.d, self.d))
        return self.xtx / self.n_samples

    def add(self, x, r) -> "LassoState":
        """Accumulate one sample without refitting."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"sample of shape {x.shape} does not match d={self.d}")
        self.xtx += np.outer(x, x)
        self.xtr += r * x
        self.n_samples += 1
        self._refresh_lambda()
        return self

    def update(self, x, r) -> "LassoState":
        """Accumulate one sample and refit from the previous estimate."""
        return self.add(x, r).fit()

    def fit(self, warm_start: bool = True, tol: float = TOL, max_sweeps: int = MAX_SWEEPS) -> "LassoState":
        if self.n_samples < 1:
            raise ValueError("fit needs at least one sample")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        A = self.xtx / self.n_samples
        c = self.xtr / self.n_samples
        beta0 = self.beta_hat if warm_start else None
        self.beta_hat, self.sweeps = solve(A, c, self.lam, beta0, tol=tol, max_sweeps=max_sweeps)
        return self

    def kkt_residual(self) -> float:
        return kkt_residual(self.xtx / self.n_samples, self.xtr / self.n_samples, self.lam, self.beta_hat)

    def copy(self) -> "LassoState":
        other = LassoState(self.d, self.x_max, self.sigma, self.fixed_lambda)
        other.xtx = self.xtx.copy()
        other.xtr = self.xtr.copy()
        other.n_samples = self.n_samples
        other.beta_hat = self.beta_hat.copy()
        other.lam = self.lam
        return other
