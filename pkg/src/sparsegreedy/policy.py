"""Arm-selection rules: greedy, top-L greedy, uniform random and the true-parameter oracle.

Ties (scores within ``TIE_TOL`` of the cut-off) are broken uniformly at
random, so with ``beta = 0`` every arm is equally likely.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import DistributionSpec, sample_rounds

TIE_TOL = 1e-12


@dataclass(frozen=True)
class PolicyDecision:
    chosen: int | tuple[int, ...]
    tie_broken: bool
    scores: np.ndarray


def select_top(scores: np.ndarray, L: int, rng: np.random.Generator, tie_tol: float = TIE_TOL):
    """Vectorized top-L selection with uniform tie breaking at the boundary.

    ``scores`` has shape ``(n, K)``; returns ``(chosen, tie_broken)`` where
    ``chosen`` is an ``(n, L)`` index array (sorted per row) and
    ``tie_broken`` flags rows whose boundary tie needed a random draw.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    n, K = scores.shape
    if not 1 <= L <= K:
        raise ValueError(f"L={L} outside [1, K={K}]")
    cutoff = -np.partition(-scores, L - 1, axis=1)[:, L - 1 : L]
    strict = scores > cutoff + tie_tol
    tied = ~strict & (scores >= cutoff - tie_tol)
    # strict winners first, then a random subset of the tied block
    priority = np.where(strict, 2.0, np.where(tied, rng.uniform(size=(n, K)), -1.0))
    chosen = np.sort(np.argsort(-priority, axis=1, kind="stable")[:, :L], axis=1)
    tie_broken = tied.sum(axis=1) > (L - strict.sum(axis=1))
    return chosen, tie_broken


def greedy_select(features, beta, rng: np.random.Generator, tie_tol: float = TIE_TOL) -> PolicyDecision:
    """Arm with the largest estimated reward ``beta^T X_k``."""
    features = np.asarray(features, dtype=float)
    scores = features @ np.asarray(beta, dtype=float)
    best = scores.max()
    winners = np.flatnonzero(scores >= best - tie_tol)
    if winners.size == 1:
        return PolicyDecision(int(winners[0]), False, scores)
    return PolicyDecision(int(winners[rng.integers(winners.size)]), True, scores)


def combinatorial_select(features, beta, L: int, rng: np.random.Generator, tie_tol: float = TIE_TOL) -> PolicyDecision:
    """The ``L`` arms with the largest estimated rewards."""
    features = np.asarray(features, dtype=float)
    scores = features @ np.asarray(beta, dtype=float)
    chosen, tie = select_top(scores[None, :], L, rng, tie_tol)
    return PolicyDecision(tuple(int(i) for i in chosen[0]), bool(tie[0]), scores)


def uniform_select(features, rng: np.random.Generator, L: int = 1) -> PolicyDecision:
    K = len(features)
    chosen = np.sort(rng.choice(K, size=L, replace=False))
    scores = np.zeros(K)
    if L == 1:
        return PolicyDecision(int(chosen[0]), False, scores)
    return PolicyDecision(tuple(int(i) for i in chosen), False, scores)


def oracle_select(features, beta_star, rng: np.random.Generator, L: int = 1) -> PolicyDecision:
    """Greedy on the true parameter; zero regret by construction."""
    if L == 1:
        return greedy_select(features, beta_star, rng)
    return combinatorial_select(features, beta_star, L, rng)


def select_batch(policy: str, features: np.ndarray, beta, L: int, rng: np.random.Generator) -> np.ndarray:
    """Apply ``policy`` to ``(n, K, d)`` features; returns ``(n, L)`` indices.

    ``policy`` is ``"greedy"`` (top-L on ``beta``) or ``"uniform"``.
    """
    n, K, _ = features.shape
    if policy == "greedy":
        scores = features @ np.asarray(beta, dtype=float)
        return select_top(scores, L, rng)[0]
    if policy == "uniform":
        return select_top(np.zeros((n, K)), L, rng)[0]
    raise ValueError(f"unknown policy {policy!r}")


def selection_mass(z: float, competitors: np.ndarray, tie_tol: float = TIE_TOL) -> np.ndarray:
    """Greedy selection probability of an arm with projection ``z``, per draw.

    ``competitors`` holds the other arms' projections, shape ``(n, K-1)``;
    tie mass is shared equally among arms attaining the maximum.
    """
    n = competitors.shape[0]
    if competitors.shape[1] == 0:
        return np.ones(n)
    best = np.maximum(z, competitors.max(axis=1))
    wins = z >= best - tie_tol
    n_tied = 1 + (competitors >= best[:, None] - tie_tol).sum(axis=1)
    return np.where(wins, 1.0 / n_tied, 0.0)


def estimate_selection_prob(
    spec: DistributionSpec,
    arm: int,
    beta,
    z,
    mc_samples: int,
    rng: np.random.Generator,
    tie_tol: float = TIE_TOL,
):
    """Monte-Carlo estimate of ``f_beta(z)``: probability that ``arm`` is picked
    by greedy when its projection ``x^T beta / ||beta||`` equals ``z``.

    Fresh competitor draws are used for every ``z``. Returns an array shaped
    like ``z`` (a float for scalar ``z``).
    """
    beta = np.asarray(beta, dtype=float)
    norm = np.linalg.norm(beta)
    if norm == 0:
        raise ValueError("selection probability needs beta != 0 (projection undefined)")
    if spec.dependence == "one_independent_arm" and arm != spec.independent_arm:
        raise ValueError(f"arm {arm} is not the independent arm of this spec")
    unit = beta / norm
    others = [k for k in range(spec.n_arms) if k != arm]
    zs = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty(zs.size)
    for i, zi in enumerate(zs.ravel()):
        feats = sample_rounds(spec, rng, mc_samples)
        comp = feats[:, others, :] @ unit
        out[i] = selection_mass(float(zi), comp, tie_tol).mean()
    if np.ndim(z) == 0:
        return float(out[0])
    return out.reshape(zs.shape)
