import json

import numpy as np
import pytest
from scipy import stats

from sparsegreedy.distributions import (
    ArbitraryMixture,
    BasisComponent,
    DistributionSpec,
    SpecError,
    component_covariance,
    component_second_moment,
    mixture_mean,
    mixture_second_moment,
    sample_annulus_square,
    sample_arm_features,
    sample_component,
    sample_mixture,
    sample_rounds,
)

# 2-D quadrature of the unit square minus the radius-0.1 quarter disk
ANNULUS_MEAN = 0.5036221054516821
ANNULUS_SQ = 0.33595226120340405
ANNULUS_CROSS = 0.25196643974491173
# radial quadrature: per-coordinate variance of N(0, 0.25 I_3) truncated to the unit ball
TRUNC_GAUSS_VAR = 0.1525261219255918


def four_atoms(p):
    atoms = ([0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0])
    return [BasisComponent("point_mass", np.array(a), weight=w) for a, w in zip(atoms, p)]


SPECS = {
    "gaussian": [BasisComponent("gaussian", np.array([0.5, -0.2]), np.array([[0.3, 0.1], [0.1, 0.2]]))],
    "low_rank": [BasisComponent("low_rank_gaussian", np.array([0.1, 0.2, 0.3]), 0.4 * np.outer([1, 1, 0], [1, 1, 0]))],
    "discrete": four_atoms((0.1, 0.2, 0.3, 0.4)),
    "ball": [BasisComponent("radial_uniform_ball", np.array([0.5, 0.5]), radius=0.5)],
    "truncated": [BasisComponent("radial_truncated_gaussian", np.zeros(3), radius=1.0, scale=0.5)],
    "mixture": [
        BasisComponent("gaussian", np.array([1.0, 0.0]), np.eye(2) * 0.1, weight=0.3),
        BasisComponent("radial_uniform_ball", np.array([0.0, 1.0]), radius=0.4, weight=0.5),
        BasisComponent("point_mass", np.array([-1.0, -1.0]), weight=0.2),
    ],
    "annulus": [BasisComponent("annulus_square", np.zeros(2), radius=0.1)],
}


@pytest.mark.parametrize("name", sorted(SPECS))
def test_empirical_moments_match_analytic(name, rng):
    mixture = SPECS[name]
    n = 100_000
    X = sample_mixture(mixture, rng, n)
    mean_se = X.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(X.mean(axis=0) - mixture_mean(mixture)) <= 4 * mean_se + 1e-12)
    outer = X[:, :, None] * X[:, None, :]
    second_se = outer.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(outer.mean(axis=0) - mixture_second_moment(mixture)) <= 4 * second_se + 1e-12)


def test_single_atom_is_constant(rng):
    spec = DistributionSpec.iid([BasisComponent("point_mass", np.array([1.0, 1.0]))], 3)
    assert np.all(sample_rounds(spec, rng, 50) == 1.0)


def test_discrete_example_second_moment(rng):
    p = (0.25, 0.25, 0.25, 0.25)
    X = sample_mixture(four_atoms(p), rng, 100_000)
    oracle = np.array([[p[1] + p[3], p[3]], [p[3], p[2] + p[3]]])
    outer = X[:, :, None] * X[:, None, :]
    se = outer.std(axis=0, ddof=1) / np.sqrt(X.shape[0])
    assert np.all(np.abs(outer.mean(axis=0) - oracle) <= 3 * se)


def test_uniform_ball_support_and_mean(rng):
    comp = BasisComponent("radial_uniform_ball", np.array([0.5, 0.5]), radius=0.5)
    X = sample_component(comp, rng, 100_000)
    assert np.all(np.linalg.norm(X - 0.5, axis=1) <= 0.5 + 1e-12)
    assert np.allclose(X.mean(axis=0), 0.5, atol=4 * 0.25 / np.sqrt(X.shape[0]))


def test_annulus_support(rng):
    X = sample_annulus_square(rng, 100_000)
    assert np.all((X >= 0) & (X <= 1))
    assert np.all((X**2).sum(axis=1) >= 0.01)
    assert sample_annulus_square(rng).shape == (2,)


def test_annulus_acceptance_rate(rng):
    n = 1_000_000
    u = rng.uniform(size=(n, 2))
    rate = ((u**2).sum(axis=1) >= 0.01).mean()
    target = 1 - np.pi * 0.01 / 4
    assert abs(target - 0.99215) < 1e-5
    assert abs(rate - target) < 3 * np.sqrt(target * (1 - target) / n)


def test_annulus_moments_match_quadrature(rng):
    comp = SPECS["annulus"][0]
    assert np.allclose(mixture_mean([comp]), ANNULUS_MEAN, atol=1e-9)
    m2 = component_second_moment(comp)
    assert np.allclose(np.diag(m2), ANNULUS_SQ, atol=1e-9)
    assert abs(m2[0, 1] - ANNULUS_CROSS) < 1e-9
    X = sample_annulus_square(rng, 200_000)
    assert np.all(np.abs(X.mean(axis=0) - ANNULUS_MEAN) < 4 * X.std(axis=0) / np.sqrt(X.shape[0]))


def test_second_moment_examples():
    assert np.array_equal(component_second_moment(BasisComponent("point_mass", np.array([1.0, 0.0]))),
                          [[1.0, 0.0], [0.0, 0.0]])
    assert np.allclose(component_second_moment(BasisComponent("gaussian", np.zeros(2), np.eye(2))), np.eye(2))
    r = 0.7
    ball = BasisComponent("radial_uniform_ball", np.zeros(2), radius=r)
    assert np.allclose(component_second_moment(ball), r * r / 4 * np.eye(2))
    trunc = SPECS["truncated"][0]
    assert np.allclose(component_covariance(trunc), TRUNC_GAUSS_VAR * np.eye(3), atol=1e-10)


def test_low_rank_draws_stay_in_range(rng):
    comp = SPECS["low_rank"][0]
    X = sample_component(comp, rng, 1000) - comp.mean
    # rank-1 covariance along (1, 1, 0)
    assert np.allclose(X[:, 0], X[:, 1]) and np.allclose(X[:, 2], 0.0)


def test_validation_errors():
    with pytest.raises(SpecError):
        BasisComponent("gaussian", np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(SpecError):
        BasisComponent("gaussian", np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SpecError):
        BasisComponent("radial_uniform_ball", np.zeros(2))
    with pytest.raises(SpecError):
        BasisComponent("annulus_square", np.zeros(3), radius=0.1)
    with pytest.raises(SpecError):
        DistributionSpec.iid(four_atoms((0.5, 0.5, 0.5, 0.5)), 2)
    with pytest.raises(SpecError):
        DistributionSpec(per_arm=(tuple(four_atoms((0.25,) * 4)), tuple(SPECS["ball"])), dependence="iid")
    with pytest.raises(SpecError):
        DistributionSpec.iid(SPECS["ball"], 2, x_max=0.5)


def test_gaussian_exempt_from_x_max():
    DistributionSpec.iid(SPECS["gaussian"], 2, x_max=1.0)


def test_json_round_trip(rng):
    spec = DistributionSpec(
        per_arm=(tuple(SPECS["mixture"]), tuple(SPECS["ball"])),
        dependence="independent_heterogeneous",
        mixture_with_arbitrary=ArbitraryMixture(0.5, q_spec=DistributionSpec.iid(four_atoms((0.25,) * 4), 2)),
    )
    back = DistributionSpec.from_json(spec.to_json())
    assert json.loads(back.to_json()) == json.loads(spec.to_json())
    a = sample_rounds(spec, np.random.default_rng(3), 100)
    b = sample_rounds(back, np.random.default_rng(3), 100)
    assert np.array_equal(a, b)


def test_short_form_config():
    spec = DistributionSpec.from_dict({"K": 3, "arm": [c.to_dict() for c in four_atoms((0.25,) * 4)]})
    assert spec.n_arms == 3 and spec.dependence == "iid"


def test_arm_features_shape(rng):
    spec = DistributionSpec.iid(SPECS["gaussian"], 4)
    assert sample_arm_features(spec, rng).shape == (4, 2)


def test_independent_arm_unaffected_by_other_arms(rng):
    """Designated arm's projection law is the same whatever the others do (KS at 1%)."""
    base = tuple(SPECS["ball"])
    coupled = DistributionSpec(per_arm=(base, base, base), dependence="one_independent_arm",
                               independent_arm=1, coupling_noise=0.05)
    shuffled = DistributionSpec(
        per_arm=(base, base, base), dependence="one_independent_arm", independent_arm=1,
        joint_sampler=lambda r, n: r.permutation(sample_mixture(base, r, 2 * n)).reshape(n, 2, 2),
    )
    u = np.array([0.6, 0.8])
    a = sample_rounds(coupled, rng, 20_000)[:, 1] @ u
    b = sample_rounds(shuffled, rng, 20_000)[:, 1] @ u
    assert stats.ks_2samp(a, b).pvalue > 0.01
    X = sample_rounds(coupled, rng, 2000)
    assert np.allclose(X[:, 0], X[:, 2], atol=0.5)


def test_mixture_fraction(rng):
    p_tilde = DistributionSpec.iid([BasisComponent("point_mass", np.array([1.0, 0.0]))], 2)
    q = DistributionSpec.iid([BasisComponent("point_mass", np.array([0.0, 1.0]))], 2)
    spec = DistributionSpec(per_arm=p_tilde.per_arm, mixture_with_arbitrary=ArbitraryMixture(0.3, q_spec=q))
    n = 50_000
    frac = (sample_rounds(spec, rng, n)[:, 0, 0] == 1.0).mean()
    assert abs(frac - 0.3) < 3 * np.sqrt(0.3 * 0.7 / n)


def test_mixture_with_sampler(rng):
    p_tilde = DistributionSpec.iid([BasisComponent("point_mass", np.array([1.0, 0.0]))], 2)
    spec = DistributionSpec(per_arm=p_tilde.per_arm,
                            mixture_with_arbitrary=ArbitraryMixture(0.5, q_sampler=lambda r, n: np.zeros((n, 2, 2))))
    X = sample_rounds(spec, rng, 1000)
    assert set(np.unique(X[:, 0, 0])) == {0.0, 1.0}
    with pytest.raises(SpecError):
        spec.to_dict()
