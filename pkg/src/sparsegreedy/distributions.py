"""Arm-feature distributions: mixture bases, dependence structure and samplers.

Each arm has a mixture of basis components. Supported component kinds:

``gaussian``
    full-rank Gaussian ``N(mean, covariance)``.
``low_rank_gaussian``
    Gaussian with a PSD, possibly singular covariance, drawn as
    ``mean + A z`` where ``A`` is an eigen-factor of the covariance.
``point_mass``
    atom at ``mean``.
``radial_uniform_ball``
    uniform on the L2 ball of ``radius`` around ``mean``.
``radial_truncated_gaussian``
    isotropic Gaussian of standard deviation ``scale`` around ``mean``,
    truncated to the L2 ball of ``radius``.
``annulus_square``
    uniform on ``[0, 1]^2`` minus the quarter disk of ``radius`` at the
    origin (d = 2 only; not a basis, used as a whole-arm law).

Gaussian components are unbounded, so they are exempt from the ``x_max``
check; the experiment harness records the realized maximum instead.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

KINDS = (
    "gaussian",
    "low_rank_gaussian",
    "point_mass",
    "radial_uniform_ball",
    "radial_truncated_gaussian",
    "annulus_square",
)
RADIAL_KINDS = ("radial_uniform_ball", "radial_truncated_gaussian")
DEPENDENCE = ("iid", "independent_heterogeneous", "one_independent_arm")

MAX_PROPOSALS = 10**6
EIG_CUTOFF = 1e-12
WEIGHT_TOL = 1e-12
PSD_TOL = 1e-10


class SpecError(ValueError):
    """Invalid distribution specification."""


class RejectionLimitError(RuntimeError):
    """A rejection sampler exceeded its proposal budget."""


@dataclass(frozen=True, eq=False)
class BasisComponent:
    kind: str
    mean: np.ndarray
    covariance: np.ndarray | None = None
    radius: float | None = None
    scale: float | None = None
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown component kind {self.kind!r}")
        mean = np.asarray(self.mean, dtype=float).ravel().copy()
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        if self.weight <= 0:
            raise SpecError("component weight must be positive")
        d = mean.size
        if self.kind in ("gaussian", "low_rank_gaussian"):
            if self.covariance is None:
                raise SpecError(f"{self.kind} component needs a covariance")
            cov = np.asarray(self.covariance, dtype=float).copy()
            if cov.shape != (d, d):
                raise SpecError(f"covariance shape {cov.shape} does not match mean of length {d}")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise SpecError("covariance is not symmetric")
            eig = np.linalg.eigvalsh(cov)
            if eig[0] < -PSD_TOL:
                raise SpecError(f"covariance not PSD (min eigenvalue {eig[0]:.3g})")
            if self.kind == "gaussian" and eig[0] <= EIG_CUTOFF:
                raise SpecError("gaussian component needs a positive definite covariance; use low_rank_gaussian")
            cov.setflags(write=False)
            object.__setattr__(self, "covariance", cov)
        elif self.covariance is not None:
            raise SpecError(f"{self.kind} component takes no covariance")
        if self.kind in RADIAL_KINDS or self.kind == "annulus_square":
            if self.radius is None or self.radius <= 0:
                raise SpecError(f"{self.kind} component needs a positive radius")
        if self.kind == "radial_truncated_gaussian" and (self.scale is None or self.scale <= 0):
            raise SpecError("radial_truncated_gaussian needs a positive scale")
        if self.kind == "annulus_square":
            if d != 2:
                raise SpecError("annulus_square is defined for d = 2 only")
            if self.radius >= 1:
                raise SpecError("annulus_square radius must be < 1")

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def factor(self) -> np.ndarray:
        """Rank-revealing factor ``A`` with ``A A^T = covariance``."""
        if self.covariance is None:
            return np.zeros((self.dim, 0))
        vals, vecs = np.linalg.eigh(self.covariance)
        keep = vals > EIG_CUTOFF
        return vecs[:, keep] * np.sqrt(vals[keep])

    def support_radius(self) -> float:
        """Largest possible |x_i - mean_i|, or inf for Gaussians."""
        if self.kind in ("gaussian", "low_rank_gaussian"):
            return 0.0 if not self.factor.size else math.inf
        if self.kind == "point_mass":
            return 0.0
        return float(self.radius)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "mean": self.mean.tolist(), "weight": self.weight}
        if self.covariance is not None:
            out["covariance"] = self.covariance.tolist()
        if self.radius is not None:
            out["radius"] = self.radius
        if self.scale is not None:
            out["scale"] = self.scale
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BasisComponent":
        return cls(
            kind=data["kind"],
            mean=data["mean"],
            covariance=data.get("covariance"),
            radius=data.get("radius"),
            scale=data.get("scale"),
            weight=data.get("weight", 1.0),
        )


Mixture = tuple[BasisComponent, ...]
JointSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class ArbitraryMixture:
    """``P = c * P_spec + (1 - c) * Q`` with ``Q`` another spec or a sampler.

    ``q_sampler(rng, n)`` must return ``(n, K, d)`` arm features.
    """

    c: float
    q_spec: "DistributionSpec | None" = None
    q_sampler: JointSampler | None = None

    def __post_init__(self):
        if not 0 < self.c < 1:
            raise SpecError("mixture weight c must lie in (0, 1)")
        if (self.q_spec is None) == (self.q_sampler is None):
            raise SpecError("give exactly one of q_spec or q_sampler")


@dataclass(frozen=True, eq=False)
class DistributionSpec:
    """Joint law of the K arm features for one round.

    ``dependence``:
      * ``iid`` - every arm draws independently from the same mixture.
      * ``independent_heterogeneous`` - independent arms, own mixtures.
      * ``one_independent_arm`` - arm ``independent_arm`` draws from its own
        mixture; the other arms come from ``joint_sampler`` or, when that is
        absent, share one latent draw per round (from the first other arm's
        mixture) plus independent N(0, coupling_noise^2) jitter.
    """

    per_arm: tuple[Mixture, ...]
    dependence: str = "iid"
    independent_arm: int = 0
    coupling_noise: float = 0.0
    joint_sampler: JointSampler | None = field(default=None, compare=False)
    mixture_with_arbitrary: ArbitraryMixture | None = None
    x_max: float | None = None

    def __post_init__(self):
        per_arm = tuple(tuple(m) for m in self.per_arm)
        object.__setattr__(self, "per_arm", per_arm)
        self.validate()

    @classmethod
    def iid(cls, mixture: Sequence[BasisComponent], K: int, **kw) -> "DistributionSpec":
        mixture = tuple(mixture)
        return cls(per_arm=(mixture,) * K, dependence="iid", **kw)

    @property
    def n_arms(self) -> int:
        return len(self.per_arm)

    @property
    def dim(self) -> int:
        return self.per_arm[0][0].dim

    def validate(self) -> None:
        if self.dependence not in DEPENDENCE:
            raise SpecError(f"unknown dependence {self.dependence!r}")
        if self.n_arms < 1:
            raise SpecError("need at least one arm")
        d = self.per_arm[0][0].dim if self.per_arm[0] else 0
        for k, mix in enumerate(self.per_arm):
            if not mix:
                raise SpecError(f"arm {k} has an empty mixture")
            total = sum(c.weight for c in mix)
            if abs(total - 1.0) > WEIGHT_TOL:
                raise SpecError(f"arm {k} weights sum to {total!r}, not 1")
            for comp in mix:
                if comp.dim != d:
                    raise SpecError("all components must share the same dimension")
                if self.x_max is not None and comp.kind not in ("gaussian", "low_rank_gaussian"):
                    reach = np.abs(comp.mean).max() + comp.support_radius()
                    if comp.kind == "annulus_square":
                        reach = 1.0
                    if reach > self.x_max + 1e-12:
                        raise SpecError(
                            f"{comp.kind} component can reach |x_i| = {reach:.4g} > x_max = {self.x_max}"
                        )
        first = [c.to_dict() for c in self.per_arm[0]]
        if self.dependence == "iid" and any([c.to_dict() for c in m] != first for m in self.per_arm):
            raise SpecError("iid dependence requires identical per-arm mixtures")
        if not 0 <= self.independent_arm < self.n_arms:
            raise SpecError("independent_arm index out of range")
        if self.coupling_noise < 0:
            raise SpecError("coupling_noise must be nonnegative")

    def marginal(self, arm: int) -> Mixture:
        return self.per_arm[arm]

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        if self.joint_sampler is not None:
            raise SpecError("a spec with a Python joint_sampler cannot be serialized")
        out = {
            "dependence": self.dependence,
            "per_arm": [[c.to_dict() for c in mix] for mix in self.per_arm],
        }
        if self.dependence == "one_independent_arm":
            out["independent_arm"] = self.independent_arm
            out["coupling_noise"] = self.coupling_noise
        if self.x_max is not None:
            out["x_max"] = self.x_max
        if self.mixture_with_arbitrary is not None:
            mix = self.mixture_with_arbitrary
            if mix.q_spec is None:
                raise SpecError("mixture with an opaque q_sampler cannot be serialized")
            out["mixture_with_arbitrary"] = {"c": mix.c, "q": mix.q_spec.to_dict()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DistributionSpec":
        if "arm" in data:
            mixture = tuple(BasisComponent.from_dict(c) for c in data["arm"])
            per_arm = (mixture,) * int(data["K"])
        else:
            per_arm = tuple(
                tuple(BasisComponent.from_dict(c) for c in mix) for mix in data["per_arm"]
            )
        mixture = None
        if "mixture_with_arbitrary" in data:
            m = data["mixture_with_arbitrary"]
            mixture = ArbitraryMixture(c=m["c"], q_spec=cls.from_dict(m["q"]))
        return cls(
            per_arm=per_arm,
            dependence=data.get("dependence", "iid"),
            independent_arm=data.get("independent_arm", 0),
            coupling_noise=data.get("coupling_noise", 0.0),
            mixture_with_arbitrary=mixture,
            x_max=data.get("x_max"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DistributionSpec":
        return cls.from_dict(json.loads(text))


# -- samplers ---------------------------------------------------------------

def _uniform_ball(rng: np.random.Generator, n: int, d: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(size=n) ** (1.0 / d)
    return direction * r[:, None]


def _truncated_gaussian_ball(
    rng: np.random.Generator, n: int, d: int, scale: float, radius: float
) -> np.ndarray:
    out = np.empty((n, d))
    filled = 0
    proposals = 0
    accept = stats.chi2.cdf((radius / scale) ** 2, d)
    while filled < n:
        need = n - filled
        batch = int(min(max(need / max(accept, 1e-6) * 1.2 + 16, 64), 4 * 10**6))
        z = scale * rng.standard_normal((batch, d))
        proposals += batch
        z = z[np.einsum("ij,ij->i", z, z) <= radius * radius]
        take = min(need, z.shape[0])
        out[filled : filled + take] = z[:take]
        filled += take
        if filled < n and proposals > MAX_PROPOSALS * max(n, 1):
            raise RejectionLimitError("truncated Gaussian acceptance region too small")
    return out


def _annulus_square(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    out = np.empty((n, 2))
    filled = 0
    proposals = 0
    while filled < n:
        need = n - filled
        batch = max(int(need * 1.1) + 16, 64)
        x = rng.uniform(size=(batch, 2))
        proposals += batch
        x = x[np.einsum("ij,ij->i", x, x) >= radius * radius]
        take = min(need, x.shape[0])
        out[filled : filled + take] = x[:take]
        filled += take
        if filled < n and proposals > MAX_PROPOSALS * max(n, 1):
            raise RejectionLimitError("annulus region too small")
    return out


def sample_annulus_square(rng: np.random.Generator, n: int | None = None, radius: float = 0.1):
    """Uniform draw(s) on the unit square minus the quarter disk of ``radius``."""
    draws = _annulus_square(rng, 1 if n is None else n, radius)
    return draws[0] if n is None else draws


def sample_component(comp: BasisComponent, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent draws from one component, shape ``(n, d)``."""
    d = comp.dim
    if comp.kind in ("gaussian", "low_rank_gaussian"):
        A = comp.factor
        return comp.mean + rng.standard_normal((n, A.shape[1])) @ A.T
    if comp.kind == "point_mass":
        return np.broadcast_to(comp.mean, (n, d)).copy()
    if comp.kind == "radial_uniform_ball":
        return comp.mean + _uniform_ball(rng, n, d, comp.radius)
    if comp.kind == "radial_truncated_gaussian":
        return comp.mean + _truncated_gaussian_ball(rng, n, d, comp.scale, comp.radius)
    return _annulus_square(rng, n, comp.radius)


def sample_mixture(mixture: Mixture, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` draws: pick component with probability w_n, then draw from it."""
    if len(mixture) == 1:
        return sample_component(mixture[0], rng, n)
    weights = np.array([c.weight for c in mixture])
    labels = rng.choice(len(mixture), size=n, p=weights / weights.sum())
    out = np.empty((n, mixture[0].dim))
    for j, comp in enumerate(mixture):
        mask = labels == j
        count = int(mask.sum())
        if count:
            out[mask] = sample_component(comp, rng, count)
    return out


def _sample_base(spec: DistributionSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    K, d = spec.n_arms, spec.dim
    out = np.empty((n, K, d))
    if spec.dependence in ("iid", "independent_heterogeneous"):
        for k in range(K):
            out[:, k] = sample_mixture(spec.per_arm[k], rng, n)
        return out
    i = spec.independent_arm
    out[:, i] = sample_mixture(spec.per_arm[i], rng, n)
    rest = [k for k in range(K) if k != i]
    if not rest:
        return out
    if spec.joint_sampler is not None:
        joint = np.asarray(spec.joint_sampler(rng, n), dtype=float)
        if joint.shape != (n, len(rest), d):
            raise SpecError(f"joint_sampler returned shape {joint.shape}, expected {(n, len(rest), d)}")
        out[:, rest] = joint
        return out
    latent = sample_mixture(spec.per_arm[rest[0]], rng, n)
    for k in rest:
        jitter = spec.coupling_noise * rng.standard_normal((n, d)) if spec.coupling_noise else 0.0
        out[:, k] = latent + jitter
    return out


def sample_rounds(spec: DistributionSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent rounds of arm features, shape ``(n, K, d)``."""
    mix = spec.mixture_with_arbitrary
    if mix is None:
        return _sample_base(spec, rng, n)
    from_p = rng.uniform(size=n) < mix.c
    out = np.empty((n, spec.n_arms, spec.dim))
    n_p = int(from_p.sum())
    if n_p:
        base = DistributionSpec(
            per_arm=spec.per_arm,
            dependence=spec.dependence,
            independent_arm=spec.independent_arm,
            coupling_noise=spec.coupling_noise,
            joint_sampler=spec.joint_sampler,
            x_max=spec.x_max,
        )
        out[from_p] = _sample_base(base, rng, n_p)
    if n - n_p:
        if mix.q_spec is not None:
            out[~from_p] = sample_rounds(mix.q_spec, rng, n - n_p)
        else:
            out[~from_p] = np.asarray(mix.q_sampler(rng, n - n_p), dtype=float)
    return out


def sample_arm_features(spec: DistributionSpec, rng: np.random.Generator) -> np.ndarray:
    """One round of arm features, shape ``(K, d)``."""
    return sample_rounds(spec, rng, 1)[0]


# -- moments ----------------------------------------------------------------

def _truncated_gaussian_radial_second_moment(d: int, scale: float, radius: float) -> float:
    """E||z||^2 for an isotropic Gaussian truncated to a ball."""
    u = (radius / scale) ** 2
    return scale**2 * d * stats.chi2.cdf(u, d + 2) / stats.chi2.cdf(u, d)


def component_mean(comp: BasisComponent) -> np.ndarray:
    if comp.kind == "annulus_square":
        a = comp.radius
        area = 1.0 - math.pi * a * a / 4
        m = (0.5 - a**3 / 3) / area
        return np.array([m, m])
    return comp.mean.copy()


def component_covariance(comp: BasisComponent) -> np.ndarray:
    d = comp.dim
    if comp.kind in ("gaussian", "low_rank_gaussian"):
        return np.array(comp.covariance)
    if comp.kind == "point_mass":
        return np.zeros((d, d))
    if comp.kind == "radial_uniform_ball":
        return comp.radius**2 / (d + 2) * np.eye(d)
    if comp.kind == "radial_truncated_gaussian":
        return _truncated_gaussian_radial_second_moment(d, comp.scale, comp.radius) / d * np.eye(d)
    second = component_second_moment(comp)
    m = component_mean(comp)
    return second - np.outer(m, m)


def component_second_moment(comp: BasisComponent) -> np.ndarray:
    """E[X X^T] = covariance + mean mean^T for one component."""
    if comp.kind == "annulus_square":
        a = comp.radius
        area = 1.0 - math.pi * a * a / 4
        sq = (1.0 / 3 - math.pi * a**4 / 16) / area
        cross = (0.25 - a**4 / 8) / area
        return np.array([[sq, cross], [cross, sq]])
    return component_covariance(comp) + np.outer(comp.mean, comp.mean)


def mixture_mean(mixture: Mixture) -> np.ndarray:
    return sum(c.weight * component_mean(c) for c in mixture)


def mixture_second_moment(mixture: Mixture) -> np.ndarray:
    return sum(c.weight * component_second_moment(c) for c in mixture)
