"""Batch entry point: run simulation grids, analyze one experiment, or enumerate.

Configuration comes from an optional JSON file plus command-line flags,
with flags taking precedence. Unknown configuration keys are rejected so
a typo cannot silently drop a factor. The seed is always explicit; no
mode reads the clock or ambient entropy.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

from .design import build_criterion
from .dgp import COVARIATE_DISTS, DGPS, load_dataset, load_observed
from .errors import ConfigError, RerandError
from .harness import (
    METHODS,
    PRESETS,
    FactorGrid,
    enumeration_check,
    evaluate_methods,
    print_progress,
    run_grid,
    write_results_csv,
    write_summary_json,
)
from .streams import RngStream

__all__ = ["RunConfig", "parse_config", "run", "main"]

MODES = ("simulate", "analyze", "enumerate")


@dataclass
class RunConfig:
    """Fully resolved run configuration."""

    mode: str
    seed: int
    workers: int
    preset: str
    out_dir: str
    input_path: str | None
    n: int
    K: int
    dgp: str
    cov_dist: str
    methods: tuple[str, ...]
    r0_levels: tuple[float, ...]
    lambda_levels: tuple[str, ...]
    c_levels: tuple[float, ...]
    datasets_per_cell: int
    experiments_per_dataset: int
    p_accept: float
    q_draws: int
    gibbs_draws: int
    gibbs_burn_in: int

    def to_grid(self) -> FactorGrid:
        return FactorGrid(
            n=self.n,
            K=self.K,
            cov_dist=self.cov_dist,
            dgp=self.dgp,
            methods=self.methods,
            r0_levels=self.r0_levels,
            lambda_levels=self.lambda_levels,
            c_levels=self.c_levels,
            datasets_per_cell=self.datasets_per_cell,
            experiments_per_dataset=self.experiments_per_dataset,
            p_accept=self.p_accept,
            q_draws=self.q_draws,
            gibbs_draws=self.gibbs_draws,
            gibbs_burn_in=self.gibbs_burn_in,
        )


_DEFAULTS = {
    "mode": "simulate",
    "workers": None,  # resolved to available parallelism
    "preset": "desk",
    "out_dir": "rerand-out",
    "input": None,
    "n": 50,
    "k": 3,
    "dgp": "DGP1",
    "cov_dist": "normal01",
    "methods": list(METHODS),
    "r0_levels": [0.2, 0.5],
    "lambda_levels": ["zero", "scaled"],
    "c_levels": [0.0, 0.01, 0.1, 0.25, 0.5],
    "datasets_per_cell": None,  # from preset unless set
    "experiments_per_dataset": None,
    "p_accept": 0.01,
    "q_draws": 100_000,
    "gibbs_draws": None,
    "gibbs_burn_in": 500,
}

_ALLOWED_KEYS = set(_DEFAULTS) | {"seed"}

_KEY_TYPES = {
    "mode": str,
    "seed": int,
    "workers": int,
    "preset": str,
    "out_dir": str,
    "input": str,
    "n": int,
    "k": int,
    "dgp": str,
    "cov_dist": str,
    "methods": list,
    "r0_levels": list,
    "lambda_levels": list,
    "c_levels": list,
    "datasets_per_cell": int,
    "experiments_per_dataset": int,
    "p_accept": float,
    "q_draws": int,
    "gibbs_draws": int,
    "gibbs_burn_in": int,
}


def _load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    for key, value in raw.items():
        if key not in _ALLOWED_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        expected = _KEY_TYPES[key]
        if value is None:
            continue
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            continue
        if not isinstance(value, expected) or isinstance(value, bool):
            raise ConfigError(
                f"config key {key!r} must be {expected.__name__}, got {type(value).__name__}"
            )
    return raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rerand",
        description=(
            "Rerandomized-experiment simulation and analysis: simulate a factor "
            "grid, analyze one observed experiment, or enumerate a small "
            "acceptance set."
        ),
    )
    parser.add_argument("--config", metavar="PATH", help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int, help="master seed (required, no clock default)")
    parser.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="replication preset")
    parser.add_argument("--out", metavar="DIR", help="output directory for simulate mode")
    parser.add_argument("--mode", choices=MODES, help="what to run (default: simulate)")
    parser.add_argument("--n", type=int, help="units per experiment")
    parser.add_argument("--k", type=int, help="number of covariates")
    parser.add_argument("--dgp", choices=DGPS, help="outcome-generating process")
    parser.add_argument("--cov-dist", choices=COVARIATE_DISTS, help="covariate distribution")
    parser.add_argument(
        "--input", metavar="PATH", help="input data file for analyze/enumerate modes"
    )
    return parser


def parse_config(argv=None) -> RunConfig:
    """Resolve defaults, config file, and flags into a validated RunConfig."""
    args = build_parser().parse_args(argv)
    merged = dict(_DEFAULTS)
    merged["seed"] = None
    if args.config:
        merged.update(_load_config_file(args.config))
    flag_values = {
        "seed": args.seed,
        "workers": args.workers,
        "preset": args.preset,
        "out_dir": args.out,
        "mode": args.mode,
        "n": args.n,
        "k": args.k,
        "dgp": args.dgp,
        "cov_dist": args.cov_dist,
        "input": args.input,
    }
    merged.update({k: v for k, v in flag_values.items() if v is not None})

    if merged["seed"] is None:
        raise ConfigError("seed is required (set --seed or the 'seed' config key)")
    if merged["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {merged['mode']!r}")
    preset = merged["preset"]
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {preset!r}")
    preset_values = PRESETS[preset]
    if merged["datasets_per_cell"] is None:
        merged["datasets_per_cell"] = preset_values["datasets_per_cell"]
    if merged["experiments_per_dataset"] is None:
        merged["experiments_per_dataset"] = preset_values["experiments_per_dataset"]
    if merged["gibbs_draws"] is None:
        merged["gibbs_draws"] = preset_values["gibbs_draws"]
    workers = merged["workers"]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")

    config = RunConfig(
        mode=merged["mode"],
        seed=int(merged["seed"]),
        workers=int(workers),
        preset=preset,
        out_dir=str(merged["out_dir"]),
        input_path=merged["input"],
        n=int(merged["n"]),
        K=int(merged["k"]),
        dgp=str(merged["dgp"]),
        cov_dist=str(merged["cov_dist"]),
        methods=tuple(merged["methods"]),
        r0_levels=tuple(float(v) for v in merged["r0_levels"]),
        lambda_levels=tuple(str(v) for v in merged["lambda_levels"]),
        c_levels=tuple(float(v) for v in merged["c_levels"]),
        datasets_per_cell=int(merged["datasets_per_cell"]),
        experiments_per_dataset=int(merged["experiments_per_dataset"]),
        p_accept=float(merged["p_accept"]),
        q_draws=int(merged["q_draws"]),
        gibbs_draws=int(merged["gibbs_draws"]),
        gibbs_burn_in=int(merged["gibbs_burn_in"]),
    )
    try:
        config.to_grid()
    except (ValueError, RerandError) as exc:
        raise ConfigError(str(exc)) from exc
    if config.mode in ("analyze", "enumerate") and not config.input_path:
        raise ConfigError(f"mode {config.mode!r} needs --input")
    return config


def _interval_to_dict(name: str, est) -> dict:
    return {
        "method": name,
        "point": est.point,
        "se": est.se,
        "lower": est.lower,
        "upper": est.upper,
        "length": est.length,
    }


def _run_simulate(config: RunConfig) -> int:
    grid = config.to_grid()
    os.makedirs(config.out_dir, exist_ok=True)
    results = run_grid(
        RngStream(config.seed), grid, workers=config.workers, progress=print_progress
    )
    csv_path = os.path.join(config.out_dir, "results.csv")
    summary_path = os.path.join(config.out_dir, "summary.json")
    write_results_csv(csv_path, results)
    write_summary_json(summary_path, results)
    print(csv_path)
    print(summary_path)
    return 0


def _run_analyze(config: RunConfig) -> int:
    data = load_observed(config.input_path)
    crit = build_criterion(data.X, data.n1, config.p_accept)
    stream = RngStream(config.seed)
    intervals = evaluate_methods(
        data,
        crit,
        stream,
        methods=config.methods,
        q_draws=config.q_draws,
        gibbs_draws=config.gibbs_draws,
        gibbs_burn_in=config.gibbs_burn_in,
    )
    payload = [_interval_to_dict(name, est) for name, est in intervals.items()]
    json.dump(payload, sys.stdout, indent=2)
    print()
    return 0


def _run_enumerate(config: RunConfig) -> int:
    cfg, X, outcomes, _ = load_dataset(config.input_path)
    crit = build_criterion(X, cfg.n // 2, config.p_accept)
    info = enumeration_check(X, outcomes, crit)
    json.dump(info, sys.stdout, indent=2)
    print()
    return 0


def run(config: RunConfig) -> int:
    """Execute one configured run; returns the process exit status."""
    try:
        if config.mode == "simulate":
            return _run_simulate(config)
        if config.mode == "analyze":
            return _run_analyze(config)
        return _run_enumerate(config)
    except RerandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
