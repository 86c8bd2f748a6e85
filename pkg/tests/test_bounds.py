import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from sparsegreedy.bounds import (
    AssumptionViolation,
    GIntegrals,
    annulus_disk_part,
    beta_directions,
    certify_direction,
    component_coefficient,
    fibonacci_sphere,
    g_integrals,
    gaussian_component_bound,
    gm_lower_bound_matrix,
    householder,
    lower_bound_matrix,
    radial_lower_bound_matrix,
    selection_function,
)
from sparsegreedy.distributions import BasisComponent, DistributionSpec, sample_annulus_square

STEP = lambda x: (np.asarray(x) >= 0).astype(float)  # noqa: E731
ONE = lambda x: np.ones_like(np.asarray(x, dtype=float))  # noqa: E731
ZERO = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731


def quad_g(f, sigma11, mu1, jump=0.0):
    """Adaptive-quadrature oracle for the three integrals (scalar f jumping at ``jump``)."""
    s = math.sqrt(sigma11)
    kw = dict(limit=200, points=[(jump - mu1) / s])
    g1 = integrate.quad(lambda z: stats.norm.pdf(z) * f(s * z + mu1), -8, 8, **kw)[0]
    g2 = integrate.quad(lambda z: z * stats.norm.pdf(z) * f(s * z + mu1), -8, 8, **kw)[0]
    g3 = integrate.quad(lambda z: (z * z - 1) * stats.norm.pdf(z) * f(s * z + mu1), -8, 8, **kw)[0]
    return g1, g2, g3


def test_constant_one():
    g = g_integrals(ONE, 0.7, 0.3)
    assert abs(g.g1 - 1) < 1e-12 and abs(g.g2) < 1e-12 and abs(g.g3) < 1e-10
    assert abs(component_coefficient(g) - 1.0) < 1e-10


def test_half_normal_golden():
    g = g_integrals(STEP, 1.0, 0.0)
    # closed-form half-normal moments
    assert abs(g.g1 - 0.5) < 1e-6
    assert abs(g.g2 - 1 / math.sqrt(2 * math.pi)) < 1e-6
    assert abs(g.g3) < 1e-6
    assert abs(component_coefficient(g) - (1 - 2 / math.sqrt(2 * math.pi)) / 2) < 1e-6
    oracle = quad_g(lambda x: float(x >= 0), 1.0, 0.0)
    assert np.allclose((g.g1, g.g2, g.g3), oracle, atol=1e-8)


def test_degenerate_limit():
    g = g_integrals(STEP, 0.0, 1.0)
    assert (g.g1, g.g2, g.g3) == (1.0, 0.0, 0.0)
    g = g_integrals(STEP, 1e-16, -1.0)
    assert g.g1 == 0.0 and component_coefficient(g) == 0.0


@pytest.mark.parametrize("sigma11,mu1,thresh", [(0.5, 0.2, 0.0), (2.0, -1.0, 0.7), (0.01, 0.0, 0.05)])
def test_shifted_step_against_quad(sigma11, mu1, thresh):
    f = lambda x: (np.asarray(x) >= thresh).astype(float)  # noqa: E731
    g = g_integrals(f, sigma11, mu1)
    oracle = quad_g(lambda x: float(x >= thresh), sigma11, mu1, thresh)
    # a jump strictly between nodes leaves an O(h) Simpson error, h = 16/2000
    assert np.allclose((g.g1, g.g2, g.g3), oracle, atol=0.25 * 16 / 2000)


def test_probability_range_enforced():
    with pytest.raises(ValueError):
        g_integrals(lambda x: 2.0 * np.ones_like(x), 1.0, 0.0)
    with pytest.raises(ValueError):
        g_integrals(lambda x: -0.1 * np.ones_like(x), 1.0, 0.0)


def test_coefficient_examples():
    assert component_coefficient(GIntegrals(1, 0, 0, 1, 0)) == 1.0
    assert component_coefficient(GIntegrals(0, 0, 0, 1, 0)) == 0.0
    with pytest.raises(ValueError):
        component_coefficient(GIntegrals(0.0, 0.5, 0.0, 1, 0))


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(0.01, 4), st.floats(-2, 2), st.integers(1, 5))
def test_g_invariants_and_positive_c(mu1, sigma11, loc, power):
    f = lambda x: stats.norm.cdf(np.asarray(x) - loc) ** power  # noqa: E731
    g = g_integrals(f, sigma11, mu1)
    assert g.g1 >= 0 and g.g1 + g.g3 >= -1e-12
    assert (g.g1 + g.g3) * g.g1 >= g.g2**2 - 1e-10
    assert component_coefficient(g) > 0


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(1e-9, 4), st.floats(-2, 2))
def test_c_positive_for_nonzero_step(thresh, sigma11, mu1):
    f = lambda x: (np.asarray(x) >= thresh).astype(float)  # noqa: E731
    g = g_integrals(f, sigma11, mu1)
    if g.g1 > 1e-12:
        assert component_coefficient(g) > 0


def test_zero_coefficient_characterization():
    # c = 0 exactly when the variance vanishes and f is 0 at the atom
    assert component_coefficient(g_integrals(STEP, 0.0, -0.5)) == 0.0
    assert component_coefficient(g_integrals(STEP, 0.0, 0.5)) == 1.0
    assert component_coefficient(g_integrals(STEP, 0.3, -0.5)) > 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_householder(beta):
    R = householder(beta)
    beta = np.array(beta)
    assert np.allclose(R @ R.T, np.eye(beta.size), atol=1e-12)
    e = R @ beta / np.linalg.norm(beta)
    assert abs(e[0] - 1) < 1e-12 and np.allclose(e[1:], 0, atol=1e-12)


def test_single_component_f_one():
    comp = BasisComponent("gaussian", np.array([0.3, -0.2, 1.0]), np.diag([0.5, 0.2, 0.1]) + 0.05)
    M, parts = gm_lower_bound_matrix([comp], [1.0, 2.0, -1.0], ONE)
    assert np.allclose(M, comp.covariance + np.outer(comp.mean, comp.mean), atol=1e-10)
    with pytest.raises(ValueError):
        gm_lower_bound_matrix([comp], np.zeros(3), ONE)


def test_low_rank_uses_rotated_variance():
    comp = BasisComponent("low_rank_gaussian", np.zeros(2), np.array([[0.0, 0.0], [0.0, 1.0]]))
    # beta along the null direction: degenerate, f at the atom
    b = gaussian_component_bound(comp, [1.0, 0.0], STEP)
    assert b.g.sigma11 < 1e-14 and b.c_n == 1.0
    b = gaussian_component_bound(comp, [0.0, 1.0], STEP)
    assert abs(b.c_n - (1 - 2 / math.sqrt(2 * math.pi)) / 2) < 1e-6


def test_radial_uniform_disk_f_one(rng):
    r = 0.8
    comp = BasisComponent("radial_uniform_ball", np.zeros(2), radius=r)
    b = radial_lower_bound_matrix(comp, [0.6, -0.8], ONE, 400_000, rng)
    assert b.c_n == 1.0
    assert np.allclose(b.bound_matrix, r * r / 4 * np.eye(2), atol=4e-3)


def test_radial_half_disk(rng):
    comp = BasisComponent("radial_uniform_ball", np.zeros(2), radius=1.0)
    b = radial_lower_bound_matrix(comp, [1.0, 0.0], STEP, 400_000, rng)
    # c~ E[z z^T | z1 > 0] = E[z z^T 1{z1 > 0}] = I / 8 for the unit disk
    assert abs(b.c_n - 0.5) < 4e-3
    assert np.allclose(b.bound_matrix, np.eye(2) / 8, atol=3e-3)
    assert np.linalg.eigvalsh(b.bound_matrix)[0] > 0


def test_radial_never_selected(rng):
    comp = BasisComponent("radial_uniform_ball", np.zeros(2), radius=1.0)
    with pytest.raises(AssumptionViolation):
        radial_lower_bound_matrix(comp, [1.0, 0.0], ZERO, 1000, rng)


def test_annulus_decomposition(rng):
    comp = BasisComponent("annulus_square", np.zeros(2), radius=0.1)
    disk = annulus_disk_part(comp)
    X = sample_annulus_square(rng, 200_000)
    inside = (np.linalg.norm(X - 0.5, axis=1) <= 0.5).mean()
    assert abs(disk.weight - inside) < 4 * math.sqrt(inside * (1 - inside) / X.shape[0])


def test_selection_function_interpolates(rng):
    spec = DistributionSpec.iid([BasisComponent("radial_uniform_ball", np.zeros(2), radius=1.0)], 2)
    f = selection_function(spec, [1.0, 0.0], rng, n_grid=21, mc_samples=2000)
    assert f.grid[0] <= -1.0 and f.grid[-1] >= 1.0
    assert f(-5.0) == f.values[0] and f(5.0) == f.values[-1]
    assert 0.0 <= f.exact(0.0) <= 1.0


def test_discrete_example_coefficients(rng):
    atoms = ([0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0])
    spec = DistributionSpec.iid([BasisComponent("point_mass", np.array(a), weight=0.25) for a in atoms], 3)
    for beta in beta_directions(2, 6, rng):
        _, parts = lower_bound_matrix(spec, beta, rng, mc_samples=4000, n_grid=51)
        assert all(p.c_n > 0 for p in parts[1:])


def test_sandwich_gaussian_mixture(rng):
    spec = DistributionSpec.iid([
        BasisComponent("gaussian", np.array([0.5, 0.0, 0.2]), 0.3 * np.eye(3), weight=0.5),
        BasisComponent("gaussian", np.array([-0.3, 0.4, 0.0]), np.diag([0.2, 0.5, 0.3]), weight=0.5),
    ], 3)
    rep = certify_direction(spec, [0.2, -0.5, 0.84], [0, 1], rng, gram_mc=50_000, f_mc=5000, n_grid=101)
    assert rep.passed and rep.phi_bound > 0
    assert all(c > 0 for c in rep.coefficients)


def test_unreachable_atom_is_violation(rng):
    spec = DistributionSpec(
        per_arm=((BasisComponent("point_mass", np.zeros(2), weight=0.5),
                  BasisComponent("point_mass", np.ones(2), weight=0.5)),
                 (BasisComponent("point_mass", np.ones(2)),)),
        dependence="independent_heterogeneous",
    )
    with pytest.raises(AssumptionViolation):
        certify_direction(spec, [1.0, 1.0], [0, 1], rng, gram_mc=1000, f_mc=500, n_grid=21)


def test_direction_grids(rng):
    pts = fibonacci_sphere(64)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    assert pts.shape == (64, 3) and abs(pts.mean(axis=0)).max() < 0.05
    for d in (2, 5):
        v = beta_directions(d, 16, rng)
        assert v.shape == (16, d) and np.allclose(np.linalg.norm(v, axis=1), 1.0)
