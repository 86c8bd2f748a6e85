"""Bandit experiments: the greedy LASSO loop, replication and regret fits."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compat import phi_S
from .distributions import DistributionSpec, sample_rounds
from .lasso import LassoConvergenceError, LassoState
from .model import random_sparse_parameter
from .policy import combinatorial_select, greedy_select

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    K: int = 3
    d: int = 10
    s0: int = 2
    horizon: int = 10_000
    L: int = 1
    noise_variance: float = 0.1
    n_trials: int = 100
    master_seed: int = 0
    distribution: DistributionSpec | None = None
    features: str = "uniform_cube"
    refit_every: int = 1
    gram_checkpoints: tuple[int, ...] = (10, 32, 100, 316, 1000, 3162, 10_000)
    fit_window: tuple[int, int] = (5000, 10_000)
    x_max: float = 1.0
    b: float | None = None
    workers: int = 1

    def __post_init__(self):
        self.gram_checkpoints = tuple(int(t) for t in self.gram_checkpoints)
        self.fit_window = tuple(int(t) for t in self.fit_window)
        self.validate()

    def validate(self):
        if self.K < 1 or self.d < 1:
            raise ValueError("K and d must be positive")
        if not 0 <= self.s0 <= self.d:
            raise ValueError(f"s0={self.s0} must lie in [0, d={self.d}]")
        if not 1 <= self.L <= self.K:
            raise ValueError(f"L={self.L} must lie in [1, K={self.K}]")
        if self.horizon < 1 or self.n_trials < 1 or self.refit_every < 1 or self.workers < 1:
            raise ValueError("horizon, n_trials, refit_every and workers must be >= 1")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        lo, hi = self.fit_window
        if not 1 <= lo < hi <= self.horizon:
            raise ValueError(f"fit_window {self.fit_window} must satisfy 1 <= lo < hi <= horizon")
        if self.features not in ("uniform_cube", "spec"):
            raise ValueError(f"unknown features source {self.features!r}")
        if self.features == "spec":
            if self.distribution is None:
                raise ValueError("features='spec' needs a distribution")
            if (self.distribution.n_arms, self.distribution.dim) != (self.K, self.d):
                raise ValueError("distribution arm count / dimension disagree with K, d")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.noise_variance)

    @property
    def checkpoints(self) -> tuple[int, ...]:
        return tuple(t for t in self.gram_checkpoints if 1 <= t <= self.horizon)

    def sample_features(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.features == "uniform_cube":
            return rng.uniform(0.0, 1.0, size=(n, self.K, self.d))
        return sample_rounds(self.distribution, rng, n)

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "K": self.K,
            "d": self.d,
            "s0": self.s0,
            "horizon": self.horizon,
            "L": self.L,
            "noise_variance": self.noise_variance,
            "n_trials": self.n_trials,
            "master_seed": self.master_seed,
            "features": self.features,
            "refit_every": self.refit_every,
            "gram_checkpoints": list(self.gram_checkpoints),
            "fit_window": list(self.fit_window),
            "x_max": self.x_max,
            "b": self.b,
            "workers": self.workers,
        }
        if self.distribution is not None:
            out["distribution"] = self.distribution.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "distribution" in known and known["distribution"] is not None:
            known["distribution"] = DistributionSpec.from_dict(known["distribution"])
        return cls(**known)


def trial_seed(master_seed: int, trial: int) -> np.random.SeedSequence:
    """Seed of trial ``trial``; reproducible in isolation from the others."""
    return np.random.SeedSequence(master_seed, spawn_key=(trial,))


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(trial_seed(master_seed, trial)))


@dataclass
class TrialResult:
    trial: int
    instant_regret: np.ndarray
    beta_star: np.ndarray
    phis: dict[int, float]
    realized_x_max: float


def run_trial(config: ExperimentConfig, trial: int) -> TrialResult:
    """One bandit run: greedy (top-L) on the previous LASSO estimate each round."""
    rng = trial_rng(config.master_seed, trial)
    beta = random_sparse_parameter(config.d, config.s0, rng)
    T, L = config.horizon, config.L
    feats = config.sample_features(rng, T)
    noise = config.sigma * rng.standard_normal((T, L))
    state = LassoState(config.d, x_max=config.x_max, sigma=config.sigma)
    beta_hat = np.zeros(config.d)
    chosen = np.empty((T, L), dtype=np.int64)
    checkpoints = set(config.checkpoints)
    support = beta.support
    phis: dict[int, float] = {}
    beta_star = beta.entries
    for t in range(T):
        X = feats[t]
        if L == 1:
            picks = (greedy_select(X, beta_hat, rng).chosen,)
        else:
            picks = combinatorial_select(X, beta_hat, L, rng).chosen
        for slot, a in enumerate(picks):
            x = X[a]
            state.add(x, float(x @ beta_star) + noise[t, slot])
        chosen[t] = picks
        if (t + 1) % config.refit_every == 0:
            try:
                state.fit()
            except LassoConvergenceError as err:
                err.round = t + 1
                raise
            beta_hat = state.beta_hat
        if t + 1 in checkpoints and support:
            phis[t + 1] = phi_S(state.gram, support).phi
    values = feats @ beta_star
    best = np.sort(values, axis=1)[:, ::-1][:, :L].sum(axis=1)
    got = np.take_along_axis(values, chosen, axis=1).sum(axis=1)
    regret = np.maximum(best - got, 0.0)
    return TrialResult(trial, regret, beta_star.copy(), phis, float(np.abs(feats).max()))


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def _window(trajectory, window) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(trajectory, dtype=float)
    lo, hi = int(window[0]), int(window[1])
    if lo < 1 or hi <= lo:
        raise ValueError(f"fit window {window} must satisfy 1 <= lo < hi")
    hi = min(hi, y.size)
    t = np.arange(lo, hi + 1, dtype=float)
    if t.size < 2:
        raise ValueError("fit window holds fewer than 2 points")
    return t, y[lo - 1 : hi]


def sqrt_fit(trajectory, window) -> tuple[float, float, float]:
    """OLS of ``a + b sqrt(t)`` on rounds ``lo..hi`` (1-based, inclusive).

    Returns ``(a, b, r_squared)``; a perfect fit of a constant reports 1.
    """
    t, y = _window(trajectory, window)
    return _ols(np.sqrt(t), y)


def linear_fit(trajectory, window) -> tuple[float, float, float]:
    t, y = _window(trajectory, window)
    return _ols(t, y)


def theoretical_bound_annotation(config: ExperimentConfig, phi_bar: float) -> float | None:
    """Greedy regret upper bound at ``T = horizon`` for a given compatibility constant.

    Returns None when ``phi_bar <= 0`` (bound undefined). The bound is loose
    and only annotates the empirical curve.
    """
    if phi_bar <= 0:
        return None
    x_max, s0, d, T = config.x_max, max(config.s0, 1), config.d, config.horizon
    b = config.b if config.b is not None else float(s0)
    kappa = min(2.0 - math.sqrt(2.0), phi_bar**2 / (256.0 * x_max**2 * s0))
    burn_in = 2.0 * x_max * b * ((1.0 + math.log(max(d * (d - 1), 1))) / kappa**2 + math.pi**2 / 3.0)
    growth = 128.0 * s0 * x_max**2 * config.sigma / phi_bar**2 * math.sqrt((4.0 * math.log(T) + 2.0 * math.log(d)) * T)
    return burn_in + growth


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cumulative: np.ndarray
    instant: np.ndarray
    beta_stars: np.ndarray
    phis: dict[int, np.ndarray]
    realized_x_max: float
    fit: tuple[float, float, float]
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        return self.cumulative.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        if self.cumulative.shape[0] < 2:
            return np.zeros(self.cumulative.shape[1])
        return self.cumulative.std(axis=0, ddof=1)

    def phi_summary(self) -> list[dict]:
        rows = []
        for t in sorted(self.phis):
            v = self.phis[t]
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
            m = float(v.mean())
            rows.append({
                "t": t, "mean": m, "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                "min": float(v.min()), "ci_low": m - 1.96 * se, "ci_high": m + 1.96 * se,
            })
        return rows

    def sublinearity_ratio(self, early: int = 1000) -> float:
        """``(R(T)/T) / (R(early)/early)`` for the mean trajectory."""
        T = self.cumulative.shape[1]
        m = self.mean
        return float((m[T - 1] / T) / (m[early - 1] / early))

    def summary(self) -> dict:
        a, b, r2 = self.fit
        phi_rows = self.phi_summary()
        checkpoint_min = min((r["mean"] for r in phi_rows if r["t"] >= 100), default=None)
        T = self.cumulative.shape[1]
        out = {
            "config": self.config.to_dict(),
            "master_seed": self.config.master_seed,
            "trial_seeds": [
                {"trial": j, "entropy": self.config.master_seed, "spawn_key": [j]}
                for j in range(self.cumulative.shape[0])
            ],
            "fit": {"a": a, "b": b, "r_squared": r2, "window": list(self.config.fit_window),
                    "model": "a + b*sqrt(t)", "loss": "ordinary least squares on the mean trajectory"},
            "final_mean_regret": float(self.mean[-1]),
            "final_std_regret": float(self.std[-1]),
            "band": "0.5 sample standard deviation (ddof=1) across trials",
            "gram_phi_checkpoints": phi_rows,
            "phi_checkpoint_min": checkpoint_min,
            "phi_note": "empirical Gram compatibility constants at logarithmic checkpoints; "
                        "the minimum over checkpoints is not a certified minimum over all rounds",
            "realized_x_max": self.realized_x_max,
        }
        if T >= 1000:
            out["sublinearity_ratio_T_vs_1000"] = self.sublinearity_ratio(1000)
        if checkpoint_min is not None and checkpoint_min > 0:
            out["theoretical_bound_at_T"] = theoretical_bound_annotation(self.config, checkpoint_min)
        else:
            out["theoretical_bound_at_T"] = None
            out["theoretical_bound_note"] = "omitted: no positive compatibility constant"
        out.update(self.extras)
        return out


def _run_one(args):
    config, j = args
    return run_trial(config, j)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """All trials (optionally in worker processes), folded in trial order."""
    start = time.perf_counter()
    jobs = [(config, j) for j in range(config.n_trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            trials = list(pool.map(_run_one, jobs))
    else:
        trials = []
        for job in jobs:
            trials.append(_run_one(job))
            log.debug("trial %d done", job[1])
    trials.sort(key=lambda r: r.trial)
    instant = np.stack([r.instant_regret for r in trials])
    cumulative = np.cumsum(instant, axis=1)
    phis = {t: np.array([r.phis[t] for r in trials]) for t in config.checkpoints if trials[0].phis.get(t) is not None}
    mean = cumulative.mean(axis=0)
    fit = sqrt_fit(mean, config.fit_window)
    return ExperimentResult(
        config=config,
        cumulative=cumulative,
        instant=instant,
        beta_stars=np.stack([r.beta_star for r in trials]),
        phis=phis,
        realized_x_max=max(r.realized_x_max for r in trials),
        fit=fit,
        wall_time=time.perf_counter() - start,
    )


def write_results(result: ExperimentResult, output_dir, plot: bool = True) -> dict[str, Path]:
    """Write regret CSV, plot-data CSVs, JSON summary, timing and (optionally) a PNG."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, T = result.cumulative.shape
    trial = np.repeat(np.arange(n), T)
    rnd = np.tile(np.arange(1, T + 1), n)
    table = np.column_stack([trial, rnd, result.instant.ravel(), result.cumulative.ravel()])
    paths = {
        "regret": out / "regret.csv",
        "mean": out / "mean_regret.csv",
        "fitted": out / "fitted_curve.csv",
        "summary": out / "summary.json",
        "timing": out / "timing.json",
    }
    np.savetxt(paths["regret"], table, fmt=["%d", "%d", "%.17g", "%.17g"], delimiter=",",
               header="trial,round,instant_regret,cumulative_regret", comments="")
    t = np.arange(1, T + 1)
    mean, std = result.mean, result.std
    np.savetxt(paths["mean"], np.column_stack([t, mean, std]), fmt=["%d", "%.17g", "%.17g"],
               delimiter=",", header="t,mean_cumulative_regret,std_cumulative_regret", comments="")
    a, b, _ = result.fit
    np.savetxt(paths["fitted"], np.column_stack([t, a + b * np.sqrt(t)]), fmt=["%d", "%.17g"],
               delimiter=",", header="t,fitted_a_plus_b_sqrt_t", comments="")
    paths["summary"].write_text(json.dumps(result.summary(), indent=2, sort_keys=True))
    paths["timing"].write_text(json.dumps({"wall_time_seconds": result.wall_time}, indent=2))
    if plot:
        from .plotting import plot_regret

        paths["figure"] = plot_regret(result, out / "regret.png")
    return paths
