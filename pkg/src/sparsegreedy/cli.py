"""Command-line front end: ``sparsegreedy {run,certify-bounds,compat,fit,validate-config}``.

Exit codes: 0 success, 2 config or input error, 3 numerical failure,
4 assumption violation, 5 support too large for exact enumeration.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .bounds import AssumptionViolation, certify_bounds
from .compat import (
    MAX_EXACT_SUPPORT,
    SupportTooLargeError,
    expected_gram,
    phi_S,
    phi_S_sampled,
    phi_stderr,
)
from .distributions import DistributionSpec, RejectionLimitError, SpecError
from .harness import ExperimentConfig, linear_fit, run_experiment, sqrt_fit, write_results
from .lasso import LassoConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSUMPTION, EXIT_SUPPORT = 0, 2, 3, 4, 5

log = logging.getLogger("sparsegreedy")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (e.g. ``appendix_experiment.json``)."""
    return Path(str(resources.files("sparsegreedy") / "configs" / name))


def load_schema() -> dict:
    return json.loads(bundled_config("schema.json").read_text())


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, pairs: list[str]) -> dict:
    """Apply ``KEY=VALUE`` pairs; dotted keys reach nested objects, values are JSON when parseable."""
    out = copy.deepcopy(config)
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"--set expects KEY=VALUE, got {pair!r}", EXIT_CONFIG)
        key, value = pair.split("=", 1)
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise CliError(f"--set {key}: {part} is not an object", EXIT_CONFIG)
        node[parts[-1]] = parse_value(value)
    return out


def resolve_config(args) -> dict:
    if not args.config:
        raise CliError("--config is required", EXIT_CONFIG)
    path = Path(args.config)
    if not path.exists():
        bundled = bundled_config(path.name)
        if path.parent == Path(".") and bundled.exists():
            path = bundled
        else:
            raise CliError(f"config file {args.config} not found", EXIT_CONFIG)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise CliError(f"config {path} is not valid JSON: {err}", EXIT_CONFIG) from err
    pairs = list(args.set or [])
    for flag, key in (("trials", "n_trials"), ("seed", "master_seed"), ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            pairs.append(f"{key}={value}")
    cfg = apply_overrides(raw, pairs)
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise CliError(f"config fails schema at {where}: {err.message}", EXIT_CONFIG) from err
    return cfg


def build_experiment(cfg: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(cfg)
    except (ValueError, SpecError, KeyError, TypeError) as err:
        raise CliError(f"harness.ExperimentConfig: {err}", EXIT_CONFIG) from err


def build_distribution(cfg: dict) -> DistributionSpec:
    if "distribution" not in cfg:
        raise CliError("config has no distribution section", EXIT_CONFIG)
    try:
        return DistributionSpec.from_dict(cfg["distribution"])
    except (ValueError, SpecError, KeyError, TypeError) as err:
        raise CliError(f"distributions.DistributionSpec.from_dict: {err}", EXIT_CONFIG) from err


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True))


# -- verbs ----------------------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = resolve_config(args)
    build_experiment(cfg)
    if "distribution" in cfg:
        build_distribution(cfg)
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    config = build_experiment(cfg)
    if not args.output:
        raise CliError("--output is required", EXIT_CONFIG)
    try:
        result = run_experiment(config)
    except LassoConvergenceError as err:
        raise CliError(f"harness.run_trial: lasso failed at round {err.round}: {err}", EXIT_NUMERIC) from err
    except (np.linalg.LinAlgError, FloatingPointError, RejectionLimitError) as err:
        raise CliError(f"harness.run_experiment: {err}", EXIT_NUMERIC) from err
    result.extras["resolved_config"] = cfg
    paths = write_results(result, args.output, plot=not args.no_plot)
    a, b, r2 = result.fit
    print(f"fit a={a:.6g} b={b:.6g} r2={r2:.6f}; final mean regret {result.mean[-1]:.6g}")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = resolve_config(args)
    spec = build_distribution(cfg)
    opts = dict(cfg.get("certify", {}))
    support = opts.pop("support", list(range(spec.dim)))
    n_dir = opts.pop("n_directions", 64)
    seed = opts.pop("seed", cfg["master_seed"])
    L = cfg.get("L", 1)
    if not args.output:
        raise CliError("--output is required", EXIT_CONFIG)
    try:
        reports = certify_bounds(spec, support, n_dir, _rng(seed), L=L, **opts)
    except AssumptionViolation as err:
        beta = None if err.beta is None else np.asarray(err.beta).tolist()
        print(f"bounds.certify_direction: assumption violated at beta={beta}: {err}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as err:
        raise CliError(f"bounds.certify_bounds: {err}", EXIT_NUMERIC) from err
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    phis = [r.phi_bound for r in reports]
    summary = {
        "resolved_config": cfg,
        "master_seed": cfg["master_seed"],
        "certify_seed": seed,
        "support": list(support),
        "n_directions": n_dir,
        "grid_min_phi_bound": float(min(phis)),
        "grid_min_note": "minimum over the direction grid, not a certified global minimum",
        "all_passed": all(r.passed for r in reports),
        "directions": [r.to_dict() for r in reports],
    }
    _write_json(out / "certify.json", summary)
    rows = np.array([[i, r.margin, r.margin_stderr, r.phi_bound] for i, r in enumerate(reports)])
    np.savetxt(out / "margins.csv", rows, fmt=["%d", "%.17g", "%.17g", "%.17g"], delimiter=",",
               header="direction,sandwich_margin,margin_stderr,phi_bound", comments="")
    if not args.no_plot:
        from .plotting import plot_margins

        plot_margins(reports, out / "margins.png")
    print(f"grid-min phi of bound {min(phis):.6g}; all sandwich margins >= -3 se: {summary['all_passed']}")
    return EXIT_OK


def _read_matrix(path: str) -> np.ndarray:
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as err:
        raise CliError(f"cannot read matrix {path}: {err}", EXIT_CONFIG) from err
    if m.shape[0] != m.shape[1] or not np.all(np.isfinite(m)):
        raise CliError(f"matrix {path} must be a finite square CSV, got shape {m.shape}", EXIT_CONFIG)
    if not np.allclose(m, m.T, atol=1e-9):
        raise CliError(f"matrix {path} is not symmetric", EXIT_CONFIG)
    return m


def _parse_support(text: str | None, d: int) -> list[int]:
    if text is None:
        return list(range(d))
    try:
        support = sorted({int(s) for s in text.split(",") if s.strip()})
    except ValueError as err:
        raise CliError(f"--support expects comma-separated indices, got {text!r}", EXIT_CONFIG) from err
    if not support or support[0] < 0 or support[-1] >= d:
        raise CliError(f"--support {text} out of range for d={d}", EXIT_CONFIG)
    return support


def _phi(matrix, support, use_grid: bool, seed: int):
    if len(support) > MAX_EXACT_SUPPORT:
        if not use_grid:
            raise CliError(
                f"|S|={len(support)} exceeds {MAX_EXACT_SUPPORT}; pass --grid for the sampled-pattern fallback",
                EXIT_SUPPORT,
            )
        return phi_S_sampled(matrix, support, n_patterns=4096, rng=_rng(seed))
    return phi_S(matrix, support)


def cmd_compat(args) -> int:
    if (args.matrix is None) == (args.config is None):
        raise CliError("give exactly one of --matrix or --config", EXIT_CONFIG)
    report: dict = {}
    if args.matrix is not None:
        matrix = _read_matrix(args.matrix)
        support = _parse_support(args.support, matrix.shape[0])
        try:
            result = _phi(matrix, support, args.grid, 0)
        except SupportTooLargeError as err:
            raise CliError(str(err), EXIT_SUPPORT) from err
        report["matrix"] = matrix.tolist()
    else:
        cfg = resolve_config(args)
        spec = build_distribution(cfg)
        opts = cfg.get("compat", {})
        support = _parse_support(args.support, spec.dim) if args.support else opts.get("support", list(range(spec.dim)))
        seed = opts.get("seed", cfg["master_seed"])
        policy = opts.get("policy", "greedy" if "beta" in opts else "uniform")
        beta = np.asarray(opts.get("beta", np.ones(spec.dim)), dtype=float)
        acc = expected_gram(spec, policy, beta, opts.get("mc_samples", 200_000), _rng(seed), L=cfg.get("L", 1))
        matrix = acc.matrix
        print("MC Gram matrix:")
        print(np.array2string(matrix, precision=6))
        print("standard errors:")
        print(np.array2string(acc.stderr, precision=2))
        result = _phi(matrix, support, args.grid, seed)
        report.update({
            "resolved_config": cfg, "master_seed": cfg["master_seed"], "policy": policy,
            "beta": beta.tolist(), "gram": matrix.tolist(), "gram_stderr": acc.stderr.tolist(),
            "phi_stderr": phi_stderr(acc, result),
        })
    report.update(result.to_dict())
    print(f"phi = {result.phi:.10g}")
    print(f"minimizer = {np.array2string(np.asarray(result.minimizer), precision=6)}")
    print(f"certificate = {result.certificate}")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "compat.json", report)
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        data = np.genfromtxt(args.input, delimiter=",", names=True)
    except (OSError, ValueError) as err:
        raise CliError(f"cannot read {args.input}: {err}", EXIT_CONFIG) from err
    names = data.dtype.names or ()
    if "mean_cumulative_regret" in names:
        traj = np.asarray(data["mean_cumulative_regret"], dtype=float)
    elif {"trial", "cumulative_regret"} <= set(names):
        trials = np.asarray(data["trial"], dtype=int)
        n = trials.max() + 1
        traj = np.asarray(data["cumulative_regret"], dtype=float).reshape(n, -1).mean(axis=0)
    else:
        raise CliError(f"{args.input} has neither mean_cumulative_regret nor trial/cumulative_regret columns",
                       EXIT_CONFIG)
    try:
        lo, hi = (int(v) for v in args.window.split(","))
        a, b, r2 = sqrt_fit(traj, (lo, hi))
        la, lb, lr2 = linear_fit(traj, (lo, hi))
    except ValueError as err:
        raise CliError(f"harness.sqrt_fit: {err}", EXIT_CONFIG) from err
    print(json.dumps({"a": a, "b": b, "r_squared": r2, "window": [lo, hi],
                      "linear": {"a": la, "b": lb, "r_squared": lr2}}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsegreedy", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config (bundled names such as appendix_experiment.json also resolve)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry; dotted keys for nested entries, JSON values (repeatable)")
    common.add_argument("--trials", type=int, metavar="N", help="override n_trials")
    common.add_argument("--seed", type=int, metavar="U64", help="override master_seed")
    common.add_argument("--workers", type=int, metavar="N", help="override worker process count")

    p = sub.add_parser("run", parents=[common], help="run a bandit experiment")
    p.add_argument("--output", metavar="DIR", help="directory for CSV/JSON/PNG results")
    p.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify-bounds", parents=[common], help="sandwich test and bound phi over a direction grid")
    p.add_argument("--output", metavar="DIR", help="directory for certify.json / margins.csv")
    p.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("compat", parents=[common], help="compatibility constant of a matrix or a distribution's Gram")
    p.add_argument("--matrix", metavar="CSV", help="d x d matrix as CSV")
    p.add_argument("--support", metavar="I,J,...", help="support indices (default: all)")
    p.add_argument("--grid", action="store_true", help=f"allow the sampled-pattern fallback for |S| > {MAX_EXACT_SUPPORT}")
    p.add_argument("--output", metavar="DIR", help="also write compat.json here")
    p.set_defaults(func=cmd_compat)

    p = sub.add_parser("fit", help="fit a + b sqrt(t) to a regret CSV")
    p.add_argument("input", metavar="CSV", help="mean_regret.csv or regret.csv from `run`")
    p.add_argument("--window", default="5000,10000", metavar="LO,HI", help="1-based inclusive round window")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("validate-config", parents=[common], help="check a config against the schema and print it resolved")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
