"""Lower-bound matrices for the greedy policy's expected Gram matrix.

For a designated independent arm with marginal law ``P_i`` and a fixed
direction ``beta``, let ``f(z)`` be the probability that greedy picks the
arm when its projection ``x^T beta / ||beta||`` equals ``z``. The expected
Gram matrix dominates

* ``sum_n w_n c_n (Sigma_n + mu_n mu_n^T)`` for Gaussian, low-rank
  Gaussian and discrete components, with ``c_n`` computed from three
  Gaussian-weighted integrals of ``f``;
* ``sum_n w_n c~_n R^T (diag(s~^2) + m~ m~^T) R`` for radial components,
  with the moments taken under the ``f``-reweighted radial law in the
  frame rotated so that ``beta`` is the first axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .compat import GramAccumulator, expected_gram, phi_S
from .distributions import (
    RADIAL_KINDS,
    BasisComponent,
    DistributionSpec,
    sample_component,
)
from .policy import estimate_selection_prob

Z_LIMIT = 8.0
N_NODES = 2001
F_GRID = 201
F_MC = 20_000
DEGENERATE_VAR = 1e-14
PROB_TOL = 1e-9
C_TOL = 1e-6


class AssumptionViolation(RuntimeError):
    """The designated arm is (numerically) never selected for this direction."""

    def __init__(self, message, beta=None):
        super().__init__(message)
        self.beta = beta


@dataclass(frozen=True)
class GIntegrals:
    g1: float
    g2: float
    g3: float
    sigma11: float
    mu1: float


@dataclass
class ComponentBound:
    c_n: float
    bound_matrix: np.ndarray
    g: GIntegrals | None = None
    weight: float = 1.0


# -- quadrature ------------------------------------------------------------------

def _simpson_weights(n: int, h: float) -> np.ndarray:
    if n % 2 == 0:
        raise ValueError("composite Simpson needs an odd node count")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


_NODES = np.linspace(-Z_LIMIT, Z_LIMIT, N_NODES)
_WEIGHTS = _simpson_weights(N_NODES, _NODES[1] - _NODES[0]) * np.exp(-0.5 * _NODES**2) / math.sqrt(2 * math.pi)


def _midvalue(f: Callable, x: np.ndarray) -> np.ndarray:
    # average of one-sided limits, so a jump sitting on a node costs O(h^4) not O(h)
    eta = 1e-9 * np.maximum(1.0, np.abs(x))
    return 0.5 * (np.asarray(f(x - eta), dtype=float) + np.asarray(f(x + eta), dtype=float))


def _check_prob(values: np.ndarray):
    if np.any(values < -PROB_TOL) or np.any(values > 1.0 + PROB_TOL) or not np.all(np.isfinite(values)):
        raise ValueError("selection-probability estimate left [0, 1]")


def g_integrals(f: Callable, sigma11: float, mu1: float) -> GIntegrals:
    """Integrals of ``f(sqrt(sigma11) z + mu1)`` against ``phi(z)``,
    ``z phi(z)`` and ``(z^2 - 1) phi(z)``.

    ``f`` is vectorized. Uses composite Simpson on [-8, 8] with 2001 nodes;
    a variance below 1e-14 returns the degenerate limit ``(f(mu1), 0, 0)``.
    """
    if sigma11 < DEGENERATE_VAR:
        value = float(np.asarray(f(np.array([mu1])), dtype=float).ravel()[0])
        _check_prob(np.array([value]))
        return GIntegrals(value, 0.0, 0.0, max(sigma11, 0.0), mu1)
    x = math.sqrt(sigma11) * _NODES + mu1
    fx = _midvalue(f, x)
    _check_prob(fx)
    wf = _WEIGHTS * fx
    g1 = float(wf.sum())
    g2 = float((wf * _NODES).sum())
    g3 = float((wf * (_NODES**2 - 1.0)).sum())
    return GIntegrals(g1, g2, g3, sigma11, mu1)


def component_coefficient(g: GIntegrals) -> float:
    """``c = (2 g1 + g3 - sqrt(g3^2 + 4 g2^2)) / 2``, floored at 0 within tolerance."""
    c = 0.5 * (2.0 * g.g1 + g.g3 - math.sqrt(g.g3**2 + 4.0 * g.g2**2))
    if c < -C_TOL:
        raise ValueError(f"negative coefficient {c:.3g}: invalid selection-probability estimate")
    return max(c, 0.0)


# -- rotation and selection function ------------------------------------------------

def householder(beta) -> np.ndarray:
    """Orthogonal ``R`` with ``R beta = ||beta|| e_1`` (a Householder reflection)."""
    beta = np.asarray(beta, dtype=float)
    norm = np.linalg.norm(beta)
    if norm == 0:
        raise ValueError("rotation undefined for beta = 0")
    d = beta.size
    u = beta / norm
    e1 = np.zeros(d)
    e1[0] = 1.0
    v = u - e1
    vv = v @ v
    if vv < 1e-30:
        return np.eye(d)
    return np.eye(d) - 2.0 * np.outer(v, v) / vv


@dataclass
class SelectionFunction:
    """Grid estimate of ``f_beta`` with linear interpolation.

    ``exact(z)`` re-estimates at a point (used for atoms, where
    interpolating across a jump would be wrong).
    """

    spec: DistributionSpec
    arm: int
    beta: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    mc_samples: int
    rng: np.random.Generator = field(repr=False)

    @classmethod
    def estimate(cls, spec, arm, beta, lo, hi, rng, n_grid=F_GRID, mc_samples=F_MC):
        grid = np.linspace(lo, hi, n_grid)
        values = estimate_selection_prob(spec, arm, beta, grid, mc_samples, rng)
        return cls(spec, arm, np.asarray(beta, dtype=float), grid, values, mc_samples, rng)

    def __call__(self, z):
        return np.interp(z, self.grid, self.values)

    def exact(self, z: float) -> float:
        return estimate_selection_prob(self.spec, self.arm, self.beta, z, self.mc_samples, self.rng)


def _projection_range(mixture, unit) -> tuple[float, float]:
    lo, hi = math.inf, -math.inf
    for comp in mixture:
        m = float(comp.mean @ unit)
        if comp.kind in ("gaussian", "low_rank_gaussian"):
            spread = Z_LIMIT * math.sqrt(max(float(unit @ comp.covariance @ unit), 0.0))
        elif comp.kind in RADIAL_KINDS:
            spread = comp.radius
        elif comp.kind == "point_mass":
            spread = 0.0
        else:
            spread = math.sqrt(2.0)
            m = float(np.array([0.5, 0.5]) @ unit)
        lo, hi = min(lo, m - spread), max(hi, m + spread)
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def selection_function(spec, beta, rng, arm=None, n_grid=F_GRID, mc_samples=F_MC) -> SelectionFunction:
    """Estimate ``f_beta`` over the projection range of the arm's components."""
    arm = spec.independent_arm if arm is None else arm
    beta = np.asarray(beta, dtype=float)
    unit = beta / np.linalg.norm(beta)
    lo, hi = _projection_range(spec.marginal(arm), unit)
    return SelectionFunction.estimate(spec, arm, beta, lo, hi, rng, n_grid, mc_samples)


# -- bound matrices ------------------------------------------------------------------

def gaussian_component_bound(comp: BasisComponent, beta, f: Callable, exact: Callable | None = None) -> ComponentBound:
    """``w c (Sigma + mu mu^T)`` for a Gaussian, low-rank Gaussian or atom."""
    if comp.kind not in ("gaussian", "low_rank_gaussian", "point_mass"):
        raise ValueError(f"{comp.kind} is not a Gaussian-type component")
    R = householder(beta)
    mu_rot = R @ comp.mean
    cov = np.zeros((comp.dim, comp.dim)) if comp.covariance is None else np.asarray(comp.covariance)
    sigma11 = float((R @ cov @ R.T)[0, 0])
    if sigma11 < DEGENERATE_VAR and exact is not None:
        g = g_integrals(lambda x: np.array([exact(float(x[0]))]), sigma11, float(mu_rot[0]))
    else:
        g = g_integrals(f, sigma11, float(mu_rot[0]))
    c = component_coefficient(g)
    matrix = comp.weight * c * (cov + np.outer(comp.mean, comp.mean))
    return ComponentBound(c, matrix, g, comp.weight)


def gm_lower_bound_matrix(mixture, beta, f: Callable, exact: Callable | None = None):
    """``sum_n w_n c_n (Sigma_n + mu_n mu_n^T)`` and the per-component bounds."""
    beta = np.asarray(beta, dtype=float)
    if np.linalg.norm(beta) == 0:
        raise ValueError("bound undefined for beta = 0")
    parts = [gaussian_component_bound(c, beta, f, exact) for c in mixture]
    return sum(p.bound_matrix for p in parts), parts


def radial_lower_bound_matrix(
    comp: BasisComponent,
    beta,
    f: Callable,
    mc_samples: int,
    rng: np.random.Generator,
) -> ComponentBound:
    """Reweighted-moment bound for one radial component (weight included).

    Draws ``Z`` from the centred radial law, weights each draw by
    ``f(z_1 + (R mu)_1)`` and assembles ``w c~ R^T (diag(s~^2) + m~ m~^T) R``.
    Raises ``AssumptionViolation`` when ``c~`` is within 3 standard errors of 0.
    """
    if comp.kind not in RADIAL_KINDS:
        raise ValueError(f"{comp.kind} is not a radial component")
    beta = np.asarray(beta, dtype=float)
    R = householder(beta)
    mu_rot = R @ comp.mean
    centred = BasisComponent(comp.kind, np.zeros(comp.dim), radius=comp.radius, scale=comp.scale)
    Z = sample_component(centred, rng, mc_samples)
    w = np.asarray(f(Z[:, 0] + mu_rot[0]), dtype=float)
    _check_prob(w)
    c = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(mc_samples)) if mc_samples > 1 else math.inf
    if c <= 3.0 * se or c <= 0:
        raise AssumptionViolation(
            f"radial component never selected for this direction (c~ = {c:.3g}, se {se:.2g})", beta
        )
    m1 = float((w * Z[:, 0]).mean() / c)
    s1 = float((w * Z[:, 0] ** 2).mean() / c - m1 * m1)
    rest = (w[:, None] * Z[:, 1:] ** 2).mean(axis=0) / c
    var = np.concatenate([[s1], rest])
    m = mu_rot.copy()
    m[0] += m1
    inner = np.diag(var) + np.outer(m, m)
    matrix = comp.weight * c * (R.T @ inner @ R)
    return ComponentBound(c, matrix, None, comp.weight)


def annulus_disk_part(comp: BasisComponent) -> BasisComponent:
    """Uniform disk of radius 1/2 at (1/2, 1/2) inside the annulus square.

    Its weight is its share of the region's area; the remainder of the
    region only adds a PSD term, so dropping it keeps a valid lower bound.
    """
    a = float(comp.radius if comp.radius is not None else 0.1)
    if a > math.sqrt(0.5) - 0.5:
        raise ValueError("excluded quarter-disk overlaps the inscribed disk")
    share = (math.pi / 4.0) / (1.0 - math.pi * a * a / 4.0)
    return BasisComponent("radial_uniform_ball", np.array([0.5, 0.5]), radius=0.5, weight=comp.weight * share)


def lower_bound_matrix(spec: DistributionSpec, beta, rng, mc_samples=F_MC, n_grid=F_GRID, radial_mc=200_000):
    """Bound matrix for the designated arm's mixture, any supported kinds."""
    arm = spec.independent_arm
    mixture = spec.marginal(arm)
    f = selection_function(spec, beta, rng, arm, n_grid, mc_samples)
    parts = []
    for comp in mixture:
        if comp.kind in RADIAL_KINDS:
            parts.append(radial_lower_bound_matrix(comp, beta, f, radial_mc, rng))
        elif comp.kind == "annulus_square":
            parts.append(radial_lower_bound_matrix(annulus_disk_part(comp), beta, f, radial_mc, rng))
        else:
            parts.append(gaussian_component_bound(comp, beta, f, f.exact))
    return sum(p.bound_matrix for p in parts), parts


# -- direction grids ---------------------------------------------------------------

def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on S^2."""
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azim = math.pi * (1.0 + math.sqrt(5.0)) * i
    return np.stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar)], axis=1)


def beta_directions(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Fibonacci points for d = 3, random unit vectors otherwise."""
    if d == 3:
        return fibonacci_sphere(n)
    if d == 2:
        angle = 2.0 * math.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(angle), np.sin(angle)], axis=1)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# -- certification ---------------------------------------------------------------------

@dataclass
class DirectionReport:
    beta: np.ndarray
    coefficients: list[float]
    bound_matrix: np.ndarray
    gram: np.ndarray
    gram_stderr: np.ndarray
    margin: float
    margin_stderr: float
    phi_bound: float

    @property
    def passed(self) -> bool:
        return self.margin >= -3.0 * self.margin_stderr

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "coefficients": self.coefficients,
            "bound_matrix": self.bound_matrix.tolist(),
            "gram": self.gram.tolist(),
            "gram_stderr": self.gram_stderr.tolist(),
            "sandwich_margin": self.margin,
            "sandwich_stderr": self.margin_stderr,
            "phi_bound": self.phi_bound,
            "passed": self.passed,
        }


def sandwich_margin(acc: GramAccumulator, bound: np.ndarray) -> tuple[float, float]:
    """``lambda_min(G - B)`` and its standard error along the minimizing eigenvector."""
    diff = acc.matrix - bound
    vals, vecs = np.linalg.eigh(0.5 * (diff + diff.T))
    return float(vals[0]), acc.quadratic_stderr(vecs[:, 0])


def certify_direction(
    spec: DistributionSpec,
    beta,
    support,
    rng: np.random.Generator,
    gram_mc: int = 200_000,
    f_mc: int = F_MC,
    n_grid: int = F_GRID,
    radial_mc: int = 200_000,
    L: int = 1,
) -> DirectionReport:
    beta = np.asarray(beta, dtype=float)
    bound, parts = lower_bound_matrix(spec, beta, rng, f_mc, n_grid, radial_mc)
    dead = [n for n, p in enumerate(parts) if p.c_n <= 0.0]
    if dead:
        # c_n = 0 means the component is never selected along this direction
        raise AssumptionViolation(f"components {dead} have zero coefficient for beta = {beta.tolist()}", beta)
    acc = expected_gram(spec, "greedy", beta, gram_mc, rng, L=L)
    margin, se = sandwich_margin(acc, bound)
    phi = phi_S(bound, support).phi
    return DirectionReport(beta, [p.c_n for p in parts], bound, acc.matrix, acc.stderr, margin, se, phi)


def certify_bounds(
    spec: DistributionSpec,
    support,
    n_directions: int,
    rng: np.random.Generator,
    **kw,
) -> list[DirectionReport]:
    """Sandwich test and bound compatibility constant over a direction grid.

    The grid minimum of ``phi_bound`` approximates the minimum over all
    directions; it is not a certified global minimum.
    """
    return [certify_direction(spec, b, support, rng, **kw) for b in beta_directions(spec.dim, n_directions, rng)]
