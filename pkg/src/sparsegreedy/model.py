"""Reward model and regret accounting for sparse linear contextual bandits.

Arm features for one round are held as a ``(K, d)`` float array; a single
feature vector is a length-``d`` array. Random streams are
``numpy.random.Generator`` instances, one per trial.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when feature and parameter dimensions disagree."""


def as_arm_set(features, x_max: float | None = None) -> np.ndarray:
    """Validate and return a ``(K, d)`` arm feature array."""
    arr = np.asarray(features, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"arm features must be a (K, d) array, got shape {arr.shape}")
    if x_max is not None and np.any(np.abs(arr) > x_max):
        raise ValueError(f"feature entry exceeds x_max={x_max}")
    return arr


@dataclass(frozen=True)
class SparseParameter:
    entries: np.ndarray
    b: float | None = None

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float).copy()
        if entries.ndim != 1 or entries.size < 1:
            raise DimensionError("parameter must be a non-empty vector")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        if self.b is not None and self.l1 > self.b:
            raise ValueError(f"||beta||_1 = {self.l1} exceeds b = {self.b}")

    @property
    def dim(self) -> int:
        return self.entries.size

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.entries))

    @property
    def s0(self) -> int:
        return len(self.support)

    @property
    def l1(self) -> float:
        return float(np.abs(self.entries).sum())


def random_sparse_parameter(d: int, s0: int, rng: np.random.Generator) -> SparseParameter:
    """Support drawn uniformly without replacement, nonzero values Uniform(0, 1)."""
    if not 0 <= s0 <= d:
        raise ValueError(f"need 0 <= s0 <= d, got s0={s0}, d={d}")
    beta = np.zeros(d)
    idx = rng.choice(d, size=s0, replace=False)
    beta[np.sort(idx)] = rng.uniform(0.0, 1.0, size=s0)
    return SparseParameter(beta)


@dataclass(frozen=True)
class RewardModel:
    beta_star: SparseParameter
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not isinstance(self.beta_star, SparseParameter):
            object.__setattr__(self, "beta_star", SparseParameter(self.beta_star))
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    def expected_rewards(self, features) -> np.ndarray:
        arr = np.asarray(features, dtype=float)
        if arr.shape[-1] != self.beta_star.dim:
            raise DimensionError(
                f"feature dimension {arr.shape[-1]} != parameter dimension {self.beta_star.dim}"
            )
        return arr @ self.beta_star.entries


def draw_reward(model: RewardModel, x, rng: np.random.Generator) -> float:
    """Noisy reward <x, beta*> + eps with eps ~ N(0, noise_sigma^2)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError("draw_reward expects a single feature vector")
    mean = float(model.expected_rewards(x))
    if model.noise_sigma == 0:
        return mean
    return mean + model.noise_sigma * float(rng.standard_normal())


def _chosen_indices(chosen, n_arms: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(chosen, dtype=int))
    if idx.size == 0 or np.any(idx < 0) or np.any(idx >= n_arms):
        raise IndexError(f"chosen arm(s) {chosen!r} not in [0, {n_arms})")
    if np.unique(idx).size != idx.size:
        raise IndexError(f"chosen arm set {chosen!r} has duplicates")
    return idx


def optimal_reward(model: RewardModel, features, L: int = 1) -> float:
    """Best achievable noiseless reward: sum of the top-L arm values."""
    values = model.expected_rewards(as_arm_set(features))
    if not 1 <= L <= values.size:
        raise ValueError(f"L={L} outside [1, K={values.size}]")
    return float(np.sort(values)[::-1][:L].sum())


def instant_regret(model: RewardModel, features, chosen) -> float:
    """Noiseless per-round regret of ``chosen`` (an index or a set of indices).

    For a set of size L the benchmark is the sum of the L largest expected
    rewards, i.e. the best size-L subset.
    """
    features = as_arm_set(features)
    idx = _chosen_indices(chosen, features.shape[0])
    values = model.expected_rewards(features)
    best = float(np.sort(values)[::-1][: idx.size].sum())
    return max(best - float(values[idx].sum()), 0.0)


@dataclass(frozen=True)
class RoundRecord:
    features: np.ndarray
    chosen: int | tuple[int, ...]
    reward: float
    optimal_reward: float
    round: int = 0
    extras: dict = field(default_factory=dict)

    @classmethod
    def build(cls, model: RewardModel, features, chosen, reward: float, round: int = 0):
        features = as_arm_set(features)
        idx = _chosen_indices(chosen, features.shape[0])
        opt = optimal_reward(model, features, L=idx.size)
        chosen_value = float(model.expected_rewards(features)[idx].sum())
        if opt < chosen_value - 1e-12:
            raise AssertionError("optimal reward below chosen expected reward")
        if isinstance(chosen, (Sequence, np.ndarray)):
            chosen = tuple(sorted(int(i) for i in idx))
        return cls(features, chosen, float(reward), opt, round)
