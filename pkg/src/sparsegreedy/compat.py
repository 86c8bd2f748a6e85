"""Compatibility constants of Gram matrices.

``phi_S(sigma, S)`` is the minimum over the cone
``{V : ||V_Sc||_1 <= 3 ||V_S||_1}`` of ``sqrt(|S| V^T sigma V) / ||V_S||_1``.
By scale invariance this is ``sqrt(|S| q*)`` where ``q*`` minimizes
``V^T sigma V`` subject to ``||V_S||_1 = 1`` and ``||V_Sc||_1 <= 3``.
Fixing the sign pattern ``s`` of ``V_S`` and relaxing ``||V_S||_1 = 1`` to
``s^T V_S = 1`` gives a convex QP per pattern with the same overall
minimum (any relaxed point rescaled by ``1 / ||V_S||_1`` stays feasible and
lowers the objective), so enumerating patterns is exact.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import DistributionSpec, sample_mixture, sample_rounds
from .policy import select_batch

MAX_EXACT_SUPPORT = 12
PGD_MAX_ITER = 10_000
PGD_TOL = 1e-13
SYM_TOL = 1e-9


class SupportTooLargeError(ValueError):
    """Exact enumeration refused; use ``phi_S_sampled`` instead."""


@dataclass
class CompatResult:
    phi: float
    minimizer: np.ndarray
    certificate: str
    support: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "phi": self.phi,
            "minimizer": self.minimizer.tolist(),
            "certificate": self.certificate,
            "support": list(self.support),
        }


def _check_matrix(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, atol=SYM_TOL, rtol=0):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (sigma + sigma.T)


def _check_support(support, d: int) -> tuple[int, ...]:
    support = tuple(sorted({int(i) for i in support}))
    if not support:
        raise ValueError("support must be nonempty")
    if support[0] < 0 or support[-1] >= d:
        raise ValueError(f"support {support} outside [0, {d})")
    return support


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{x : ||x||_1 <= radius}`` (sort-based)."""
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def _cone_value(sigma, V, on) -> float:
    scale = np.abs(V[on]).sum()
    return float(V @ sigma @ V) / scale**2


def _pattern_qp(sigma, on, off, signs, lipschitz, radius=3.0):
    """Accelerated projected gradient for one sign pattern; returns V."""
    s = signs.size
    d = sigma.shape[0]

    def project(V):
        out = np.empty_like(V)
        vs = V[on]
        out[on] = vs - (signs @ vs - 1.0) * signs / s
        if off.size:
            out[off] = project_l1_ball(V[off], radius)
        return out

    x = np.zeros(d)
    x[on] = signs / s
    if lipschitz <= 0:
        return x
    step = 1.0 / lipschitz
    y = x.copy()
    t = 1.0
    for _ in range(PGD_MAX_ITER):
        x_new = project(y - step * 2.0 * (sigma @ y))
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        change = np.abs(x_new - x).max()
        # restart momentum when the objective goes up
        if x_new @ sigma @ x_new > x @ sigma @ x:
            y = x_new.copy()
            t_new = 1.0
        x, t = x_new, t_new
        if change < PGD_TOL:
            break
    return x


def _polish(sigma, V, on, off, signs, radius=3.0):
    """Solve the equality QP on the active set suggested by ``V``.

    Returns a feasible point (possibly ``V`` itself) of no larger value.
    """
    base = float(V @ sigma @ V)
    tol = 1e-9
    act = off[np.abs(V[off]) > tol] if off.size else off
    idx = np.concatenate([on, act]).astype(int)
    tau = np.sign(V[act])
    n_on = on.size
    rows = [np.concatenate([signs, np.zeros(act.size)])]
    rhs = [1.0]
    if off.size and np.abs(V[off]).sum() > radius - 1e-7 and act.size:
        rows.append(np.concatenate([np.zeros(n_on), tau]))
        rhs.append(radius)
    C = np.array(rows)
    M = sigma[np.ix_(idx, idx)]
    m = len(rhs)
    kkt = np.block([[2.0 * M, C.T], [C, np.zeros((m, m))]])
    try:
        sol = np.linalg.lstsq(kkt, np.concatenate([np.zeros(idx.size), rhs]), rcond=None)[0]
    except np.linalg.LinAlgError:
        return V
    x = sol[: idx.size]
    cand = np.zeros_like(V)
    cand[idx] = x
    if not np.allclose(C @ x, rhs, atol=1e-10):
        return V
    if act.size and (np.any(tau * x[n_on:] < -1e-12) or np.abs(x[n_on:]).sum() > radius + 1e-10):
        return V
    if float(cand @ sigma @ cand) <= base:
        return cand
    return V


def _patterns(s: int):
    # V and -V have equal value, so the first sign can be fixed
    for tail in itertools.product((1.0, -1.0), repeat=s - 1):
        yield np.array((1.0,) + tail)


def phi_S(sigma, support) -> CompatResult:
    """Compatibility constant by sign-pattern enumeration over the support."""
    sigma = _check_matrix(sigma)
    d = sigma.shape[0]
    support = _check_support(support, d)
    s = len(support)
    if s > MAX_EXACT_SUPPORT:
        raise SupportTooLargeError(
            f"|S| = {s} > {MAX_EXACT_SUPPORT}: exact enumeration refused, use phi_S_sampled"
        )
    on = np.array(support)
    off = np.array([j for j in range(d) if j not in support], dtype=int)
    lip = 2.0 * max(np.linalg.eigvalsh(sigma)[-1], 0.0)
    best_val, best_V = math.inf, None
    for signs in _patterns(s):
        V = _pattern_qp(sigma, on, off, signs, lip)
        V = _polish(sigma, V, on, off, signs)
        val = _cone_value(sigma, V, on)
        if val < best_val:
            best_val, best_V = val, V
    best_V = best_V / np.abs(best_V[on]).sum()
    phi = math.sqrt(max(s * best_val, 0.0))
    return CompatResult(phi, best_V, "exact_enumeration", support)


def phi_S_sampled(sigma, support, n_patterns: int, rng: np.random.Generator) -> CompatResult:
    """Upper estimate of ``phi_S`` from a random subset of sign patterns.

    Used for supports too large to enumerate; not a certified minimum.
    """
    sigma = _check_matrix(sigma)
    d = sigma.shape[0]
    support = _check_support(support, d)
    s = len(support)
    on = np.array(support)
    off = np.array([j for j in range(d) if j not in support], dtype=int)
    lip = 2.0 * max(np.linalg.eigvalsh(sigma)[-1], 0.0)
    vecs = np.linalg.eigh(sigma)[1]
    candidates = [np.where(vecs[on, k] >= 0, 1.0, -1.0) for k in range(min(d, 8))]
    candidates += [rng.choice([-1.0, 1.0], size=s) for _ in range(n_patterns)]
    best_val, best_V = math.inf, None
    for signs in candidates:
        V = _polish(sigma, _pattern_qp(sigma, on, off, signs, lip), on, off, signs)
        val = _cone_value(sigma, V, on)
        if val < best_val:
            best_val, best_V = val, V
    best_V = best_V / np.abs(best_V[on]).sum()
    return CompatResult(math.sqrt(max(s * best_val, 0.0)), best_V, "projected_descent", support)


def _simplex_grid(m: int, resolution: int, total: int | None = None) -> np.ndarray:
    """Integer compositions of ``total`` into ``m`` parts, scaled by 1/resolution."""
    if total is None:
        total = resolution
    if m == 1:
        return np.full((1, 1), total / resolution)
    if m == 2:
        i = np.arange(total + 1)
        return np.stack([i, total - i], axis=1) / resolution
    parts = [
        np.hstack([np.full((sub.shape[0], 1), i / resolution), sub])
        for i in range(total + 1)
        for sub in (_simplex_grid(m - 1, resolution, total - i),)
    ]
    return np.vstack(parts)


def _signed_shell(m: int, resolution: int, fix_first: bool) -> np.ndarray:
    # points with zero coordinates repeat across sign patterns; harmless for a minimum
    simplex = _simplex_grid(m, resolution)
    out = []
    for signs in itertools.product((1.0, -1.0), repeat=m):
        if fix_first and signs[0] < 0:
            continue
        out.append(simplex * np.array(signs))
    return np.concatenate(out)


def _shell_size(m: int, resolution: int, fix_first: bool) -> int:
    if m == 0:
        return 1
    return 2 ** (m - fix_first) * math.comb(resolution + m - 1, m - 1)


def auto_resolution(d: int, s: int, budget: int = 3_000_000, cap: int = 4000) -> int:
    """Finest grid resolution whose point-pair count stays within ``budget``."""
    res = 4
    while res < cap:
        nxt = res * 2
        if _shell_size(s, nxt, True) * _shell_size(d - s, nxt, False) > budget:
            break
        res = nxt
    lo, hi = res, min(res * 2, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _shell_size(s, mid, True) * _shell_size(d - s, mid, False) > budget:
            hi = mid
        else:
            lo = mid
    return lo


def phi_S_grid(sigma, support, resolution: int | None = None) -> float:
    """Brute-force ``phi_S`` for ``d <= 4``.

    Grids the unit L1 sphere on the support and the unit L1 sphere of
    off-support directions; the off-support radius in ``[0, 3]`` is then
    minimized exactly (the objective is a 1-D quadratic in it). With
    ``resolution=None`` the finest grid within a fixed point budget is used.
    """
    sigma = _check_matrix(sigma)
    d = sigma.shape[0]
    if d > 4:
        raise ValueError("grid oracle is limited to d <= 4")
    support = _check_support(support, d)
    on = list(support)
    off = [j for j in range(d) if j not in support]
    if resolution is None:
        resolution = auto_resolution(d, len(on))
    shell = _signed_shell(len(on), resolution, fix_first=True)
    U = np.zeros((shell.shape[0], d))
    U[:, on] = shell
    a = np.einsum("ij,jk,ik->i", U, sigma, U)
    if not off:
        return math.sqrt(max(len(on) * a.min(), 0.0))
    wshell = _signed_shell(len(off), resolution, fix_first=False)
    W = np.zeros((wshell.shape[0], d))
    W[:, off] = wshell
    B = U @ sigma @ W.T
    c = np.einsum("ij,jk,ik->i", W, sigma, W)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(c > 0, np.clip(-B / c, 0.0, 3.0), np.where(B < 0, 3.0, 0.0))
    vals = a[:, None] + 2.0 * r * B + r * r * c[None, :]
    return math.sqrt(max(len(on) * float(vals.min()), 0.0))


# -- Gram matrices -------------------------------------------------------------

@dataclass
class GramAccumulator:
    """Running sum of per-round Gram contributions.

    Each round contributes ``M = sum_{a in I} X_a X_a^T``; the normalized
    matrix divides by ``count`` (``per_round``) or ``L * count``
    (``per_selection``). Second moments of ``vec(M)`` are kept so the
    Monte-Carlo covariance of the normalized matrix is available.
    """

    d: int
    L: int = 1
    divisor_mode: str = "per_round"
    total: np.ndarray = field(default=None)
    total_sq: np.ndarray = field(default=None)
    count: int = 0

    def __post_init__(self):
        if self.divisor_mode not in ("per_round", "per_selection"):
            raise ValueError(f"unknown divisor_mode {self.divisor_mode!r}")
        if self.total is None:
            self.total = np.zeros((self.d, self.d))
        if self.total_sq is None:
            self.total_sq = np.zeros((self.d * self.d, self.d * self.d))

    @property
    def divisor(self) -> float:
        return self.count * (self.L if self.divisor_mode == "per_selection" else 1)

    def add_rounds(self, selected: np.ndarray) -> "GramAccumulator":
        """Add rounds of selected features, shape ``(n, L, d)`` or ``(n, d)``."""
        X = np.asarray(selected, dtype=float)
        if X.ndim == 2:
            X = X[:, None, :]
        M = np.einsum("nli,nlj->nij", X, X).reshape(X.shape[0], -1)
        self.total += M.sum(axis=0).reshape(self.d, self.d)
        self.total_sq += M.T @ M
        self.count += X.shape[0]
        return self

    def merge(self, other: "GramAccumulator") -> "GramAccumulator":
        if (other.d, other.L, other.divisor_mode) != (self.d, self.L, self.divisor_mode):
            raise ValueError("cannot merge accumulators of different shape or mode")
        return GramAccumulator(
            self.d, self.L, self.divisor_mode,
            self.total + other.total, self.total_sq + other.total_sq, self.count + other.count,
        )

    @property
    def matrix(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros((self.d, self.d))
        return self.total / self.divisor

    @property
    def covariance(self) -> np.ndarray:
        """Covariance of ``vec(matrix)`` as a Monte-Carlo mean, ``(d^2, d^2)``."""
        n = self.count
        if n < 2:
            return np.full((self.d**2, self.d**2), np.inf)
        k = self.divisor / n
        mean = self.total.reshape(-1) / n
        cov = (self.total_sq / n - np.outer(mean, mean)) * n / (n - 1)
        return cov / n / (k * k)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0)).reshape(self.d, self.d)

    def quadratic_stderr(self, v) -> float:
        """Standard error of ``v^T matrix v``."""
        v = np.asarray(v, dtype=float)
        w = np.outer(v, v).reshape(-1)
        return math.sqrt(max(float(w @ self.covariance @ w), 0.0))

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "stderr": self.stderr.tolist(),
            "count": self.count,
            "L": self.L,
            "divisor_mode": self.divisor_mode,
        }


def expected_gram(
    spec: DistributionSpec,
    policy: str,
    beta,
    mc_samples: int,
    rng: np.random.Generator,
    L: int = 1,
    batch: int = 50_000,
) -> GramAccumulator:
    """Monte-Carlo estimate of the policy's expected Gram matrix at fixed ``beta``.

    Draws arm sets, applies ``policy`` (``"greedy"`` or ``"uniform"``) and
    averages ``(1/L) sum_{a in I} X_a X_a^T``.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    acc = GramAccumulator(spec.dim, L, "per_selection" if L > 1 else "per_round")
    done = 0
    while done < mc_samples:
        n = min(batch, mc_samples - done)
        feats = sample_rounds(spec, rng, n)
        chosen = select_batch(policy, feats, beta, L, rng)
        acc.add_rounds(np.take_along_axis(feats, chosen[:, :, None], axis=1))
        done += n
    return acc


def phi_stderr(acc: GramAccumulator, result: CompatResult) -> float:
    """First-order standard error of ``phi_S(acc.matrix)``.

    At the minimizer ``V`` (with ``||V_S||_1 = 1``) ``phi^2 = |S| V^T G V``,
    so ``d phi = |S| d(V^T G V) / (2 phi)``.
    """
    s = len(result.support)
    se_q = acc.quadratic_stderr(result.minimizer)
    if result.phi <= 0:
        return math.sqrt(s * se_q)
    return s * se_q / (2.0 * result.phi)


# -- eigenvalues -----------------------------------------------------------------

def jacobi_eigenvalues(sigma, tol: float = 1e-10, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(sigma, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if np.abs(A - A.T).max(initial=0.0) > 1e-9:
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    for _ in range(max_sweeps):
        off = math.sqrt(max(float((A * A).sum() - (np.diag(A) ** 2).sum()), 0.0))
        if off < tol * 1e-3 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p].copy(), A[q].copy()
                A[p], A[q] = c * rp - s * rq, s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * cp - s * cq, s * cp + c * cq
                A[p, q] = A[q, p] = 0.0
    return np.sort(np.diag(A))


def min_eigenvalue(sigma) -> float:
    return float(jacobi_eigenvalues(sigma)[0])


def covariate_density_check(
    spec: DistributionSpec,
    beta,
    mc_samples: int,
    rng: np.random.Generator,
    arm: int = 0,
    return_stderr: bool = False,
):
    """Monte-Carlo ``lambda_min(E[X X^T 1{X^T beta > 0}])`` for one arm's marginal."""
    beta = np.asarray(beta, dtype=float)
    X = sample_mixture(spec.marginal(arm), rng, mc_samples)
    keep = (X @ beta) > 0
    acc = GramAccumulator(spec.dim)
    acc.add_rounds(X * keep[:, None])
    M = acc.matrix
    vals = jacobi_eigenvalues(M)
    value = float(vals[0])
    if not return_stderr:
        return value
    v = np.linalg.eigh(M)[1][:, 0]
    return value, acc.quadratic_stderr(v)
