"""Factorial Monte Carlo study of interval methods under rerandomization.

The study crosses outcome-model strength, average-effect size, and
effect heterogeneity over repeated datasets and repeated rerandomized
experiments per dataset, evaluating every enabled interval method on the
same accepted allocation so method comparisons are paired. Results are
summarized two ways: a balanced ANOVA decomposition of interval length
and coverage into factor contributions, and per-method main-effect
tables (length relative to the unadjusted baseline, coverage relative to
the nominal 95%).

Work is split over (cell, dataset) units; every random draw is keyed by
a lineage derived from the master seed, the grid hash, and the unit's
indices, so results are reproducible bit for bit regardless of worker
count or scheduling.
"""

from __future__ import annotations

import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np

from .bayes import PriorSpec, credible_interval, gibbs_tau_batch, tau_posterior
from .design import (
    build_criterion,
    default_max_tries,
    draw_accepted_allocation,
    enumerate_acceptance_set,
)
from .dgp import DgpConfig, PotentialOutcomes, generate_covariates, generate_outcomes
from .errors import BaselineError, GridBalanceError
from .estimators import (
    CRITICAL_VALUE,
    IntervalEstimate,
    ObservedData,
    adjusted_batch,
    adjusted_intervals,
    neyman_batch,
    neyman_interval,
)
from .ldr import QuantileCache, asymptotics_batch, ldr_interval
from .streams import RngStream

__all__ = [
    "METHODS",
    "FactorGrid",
    "PRESETS",
    "ResultRecord",
    "ResultSet",
    "AnovaTable",
    "run_grid",
    "evaluate_methods",
    "anova",
    "main_effects_length",
    "main_effects_coverage",
    "enumeration_check",
    "grid_hash",
    "write_results_csv",
    "write_summary_json",
    "summary_dict",
]

METHODS = (
    "Neyman",
    "NointE",
    "NointH2",
    "NointH3",
    "IntE",
    "IntH2",
    "IntH3",
    "NointB",
    "IntB",
    "LDR",
)

PRESETS = {
    "desk": {"datasets_per_cell": 10, "experiments_per_dataset": 500, "gibbs_draws": 2000},
    "paper": {"datasets_per_cell": 20, "experiments_per_dataset": 2000, "gibbs_draws": 2000},
}

# Lineage layout. Children of the (seed, grid-hash) root:
#   0 -> per-unit streams, then .derive(cell).derive(dataset)
#   1 -> the shared quantile-cache pools
# Children of one experiment's stream:
#   0 -> allocation rejection sampling, 1 -> direct Q sampling,
#   2 -> additive-model chain, 3 -> interaction-model chain
_PATH_UNITS = 0
_PATH_QCACHE = 1
_EXP_ALLOC = 0
_EXP_LDR = 1
_EXP_CHAIN = {"NointB": 2, "IntB": 3}

_GIBBS_BATCH = 256


@dataclass(frozen=True)
class FactorGrid:
    """The factor levels and per-cell replication counts of one study.

    ``n``, ``K``, the covariate distribution, and the outcome process are
    fixed per grid (they index the report tables); the crossed factors
    are the model-strength levels, the effect-size modes, and the
    heterogeneity ratios.
    """

    n: int
    K: int
    cov_dist: str
    dgp: str
    methods: tuple[str, ...] = METHODS
    r0_levels: tuple[float, ...] = (0.2, 0.5)
    lambda_levels: tuple[str, ...] = ("zero", "scaled")
    c_levels: tuple[float, ...] = (0.0, 0.01, 0.1, 0.25, 0.5)
    datasets_per_cell: int = 10
    experiments_per_dataset: int = 500
    p_accept: float = 0.01
    max_tries: int | None = None
    q_draws: int = 100_000
    gibbs_draws: int = 2000
    gibbs_burn_in: int = 500

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; expected among {METHODS}")
        if not (self.methods and self.r0_levels and self.lambda_levels and self.c_levels):
            raise ValueError("all factor level lists must be nonempty")
        if min(self.datasets_per_cell, self.experiments_per_dataset) < 1:
            raise ValueError("replication counts must be positive")

    @property
    def shape(self) -> tuple[int, int, int, int, int, int]:
        return (
            len(self.methods),
            len(self.r0_levels),
            len(self.lambda_levels),
            len(self.c_levels),
            self.datasets_per_cell,
            self.experiments_per_dataset,
        )

    def cell_config(self, e: int, f: int, g: int) -> DgpConfig:
        return DgpConfig(
            dgp=self.dgp,
            n=self.n,
            K=self.K,
            cov_dist=self.cov_dist,
            r0_sq=self.r0_levels[e],
            lambda_mode=self.lambda_levels[f],
            c=self.c_levels[g],
        )


def grid_hash(grid: FactorGrid) -> int:
    """Stable 64-bit hash of the grid configuration, used in lineages and provenance."""
    payload = json.dumps(asdict(grid), sort_keys=True).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


@dataclass(frozen=True)
class ResultRecord:
    """One (method, setting, dataset, experiment) cell of the study."""

    m: int
    e: int
    f: int
    g: int
    d: int
    r: int
    length: float
    covered: bool


@dataclass
class ResultSet:
    """Dense study results, indexed [method, r0, lambda, c, dataset, experiment]."""

    grid: FactorGrid
    seed: int
    lengths: np.ndarray
    covered: np.ndarray

    @property
    def config_hash(self) -> str:
        return f"{grid_hash(self.grid):016x}"

    def records(self):
        """Iterate records in index order (slow; meant for small result sets)."""
        M, E, F, G, D, R = self.lengths.shape
        for m in range(M):
            for e in range(E):
                for f in range(F):
                    for g in range(G):
                        for d in range(D):
                            for r in range(R):
                                yield ResultRecord(
                                    m, e, f, g, d, r,
                                    float(self.lengths[m, e, f, g, d, r]),
                                    bool(self.covered[m, e, f, g, d, r]),
                                )


def _methods_plan(methods: tuple[str, ...]):
    """Split the enabled methods into evaluation families."""
    noint = tuple(v for v, tag in (("EHW", "NointE"), ("HC2", "NointH2"), ("HC3", "NointH3")) if tag in methods)
    interact = tuple(v for v, tag in (("EHW", "IntE"), ("HC2", "IntH2"), ("HC3", "IntH3")) if tag in methods)
    bayes_models = tuple(mod for mod in ("NointB", "IntB") if mod in methods)
    return {
        "neyman": "Neyman" in methods,
        "noint": noint,
        "interact": interact,
        "ldr": "LDR" in methods,
        "bayes": bayes_models,
    }


# Per-process quantile caches, keyed by run identity. Cached values are
# pure functions of the lineage, so per-worker caches agree across any
# scheduling of units onto workers.
_QCACHES: dict[tuple, QuantileCache] = {}


def _get_qcache(seed: int, ghash: int, q_draws: int) -> QuantileCache:
    key = (seed, ghash, q_draws)
    cache = _QCACHES.get(key)
    if cache is None:
        cache = QuantileCache(
            RngStream(seed).derive(ghash).derive(_PATH_QCACHE), n_draws=q_draws
        )
        _QCACHES[key] = cache
    return cache


def _store(lengths, covered, row, sate, points, halves, rows=None):
    """Fill one method's result rows from point estimates and interval half-widths."""
    lower = points - halves
    upper = points + halves
    if rows is None:
        lengths[row] = upper - lower
        covered[row] = (lower <= sate) & (sate <= upper)
    else:
        lengths[row, rows] = upper - lower
        covered[row, rows] = (lower <= sate) & (sate <= upper)


def _simulate_unit(args):
    """Worker entry: simulate all experiments of one (cell, dataset) unit.

    The interval methods are evaluated through batched-across-experiments
    linear algebra; experiments the batch cannot certify (rank or
    leverage trouble) are re-run through the single-experiment reference
    path, which raises the typed error if the problem is real.
    """
    seed, grid, e, f, g, d = args
    M, E, F, G, D, R = grid.shape
    ghash = grid_hash(grid)
    cell = (e * F + f) * G + g
    unit = RngStream(seed).derive(ghash).derive(_PATH_UNITS).derive(cell).derive(d)
    cfg = grid.cell_config(e, f, g)
    try:
        data_stream = unit.derive(0)
        X = generate_covariates(data_stream, cfg)
        outcomes = generate_outcomes(data_stream, cfg, X)
        sate = outcomes.sate
        crit = build_criterion(X, cfg.n // 2, grid.p_accept)
        max_tries = grid.max_tries or default_max_tries(grid.p_accept)
        plan = _methods_plan(grid.methods)
        method_row = {name: i for i, name in enumerate(grid.methods)}

        W = np.empty((R, cfg.n), dtype=np.int8)
        Y_obs = np.empty((R, cfg.n))
        for r in range(R):
            exp_stream = unit.derive(r + 1)
            w, _ = draw_accepted_allocation(exp_stream.derive(_EXP_ALLOC), X, crit, max_tries)
            W[r] = w
            Y_obs[r] = np.where(w == 1, outcomes.y1, outcomes.y0)

        lengths = np.empty((M, R))
        covered = np.empty((M, R), dtype=bool)

        if plan["neyman"]:
            points, ses = neyman_batch(W, Y_obs)
            _store(lengths, covered, method_row["Neyman"], sate, points, CRITICAL_VALUE * ses)

        for interaction, variants in ((False, plan["noint"]), (True, plan["interact"])):
            if not variants:
                continue
            per_tag, bad = adjusted_batch(X, W, Y_obs, interaction, variants)
            for tag, (points, ses) in per_tag.items():
                _store(lengths, covered, method_row[tag], sate, points, CRITICAL_VALUE * ses)
            for r in np.nonzero(bad)[0]:
                data = ObservedData(X, W[r], Y_obs[r])
                for tag, est in adjusted_intervals(data, interaction, variants).items():
                    lengths[method_row[tag], r] = est.length
                    covered[method_row[tag], r] = est.covers(sate)

        if plan["ldr"]:
            qcache = _get_qcache(seed, ghash, grid.q_draws)
            v_tau, r2 = asymptotics_batch(X, W, Y_obs)
            points = (W * Y_obs).sum(axis=1) / crit.n1 - ((1 - W) * Y_obs).sum(axis=1) / crit.n0
            quantiles = np.array(
                [qcache.q975(cfg.K, crit.threshold, r2[r]) for r in range(R)]
            )
            halves = quantiles * np.sqrt(v_tau / cfg.n)
            _store(lengths, covered, method_row["LDR"], sate, points, halves)

        for model in plan["bayes"]:
            i = method_row[model]
            chain_tag = _EXP_CHAIN[model]
            for start in range(0, R, _GIBBS_BATCH):
                stop = min(start + _GIBBS_BATCH, R)
                streams = [unit.derive(r + 1).derive(chain_tag) for r in range(start, stop)]
                taus = gibbs_tau_batch(
                    streams,
                    X,
                    W[start:stop],
                    Y_obs[start:stop],
                    model,
                    PriorSpec(),
                    grid.gibbs_draws,
                    grid.gibbs_burn_in,
                )
                tail = (1.0 - 0.95) / 2.0
                lower = np.quantile(taus, tail, axis=1)
                upper = np.quantile(taus, 1.0 - tail, axis=1)
                lengths[i, start:stop] = upper - lower
                covered[i, start:stop] = (lower <= sate) & (sate <= upper)
    except Exception as exc:
        raise RuntimeError(
            f"simulation failed in cell (e={e}, f={f}, g={g}), dataset {d}: {exc}"
        ) from exc
    return e, f, g, d, lengths, covered


def run_grid(
    master: RngStream | int,
    grid: FactorGrid,
    workers: int = 1,
    progress=None,
) -> ResultSet:
    """Run the full factorial study and return dense results.

    Every enabled method sees the same accepted allocation within an
    experiment. ``workers`` only controls process-level parallelism over
    (cell, dataset) units; all randomness is keyed by lineage, so any
    worker count produces identical results. ``progress`` is an optional
    callable invoked as ``progress(done, total)`` after each unit.
    """
    if isinstance(master, int):
        master = RngStream(master)
    if master.path:
        raise ValueError("run_grid expects a root stream (empty path)")
    seed = master.master_seed
    M, E, F, G, D, R = grid.shape
    lengths = np.full((M, E, F, G, D, R), np.nan)
    covered = np.zeros((M, E, F, G, D, R), dtype=bool)
    units = [
        (seed, grid, e, f, g, d)
        for e in range(E)
        for f in range(F)
        for g in range(G)
        for d in range(D)
    ]
    done = 0
    if workers <= 1:
        for args in units:
            e, f, g, d, unit_lengths, unit_covered = _simulate_unit(args)
            lengths[:, e, f, g, d, :] = unit_lengths
            covered[:, e, f, g, d, :] = unit_covered
            done += 1
            if progress:
                progress(done, len(units))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_simulate_unit, args) for args in units]
            for future in as_completed(futures):
                e, f, g, d, unit_lengths, unit_covered = future.result()
                lengths[:, e, f, g, d, :] = unit_lengths
                covered[:, e, f, g, d, :] = unit_covered
                done += 1
                if progress:
                    progress(done, len(units))
    return ResultSet(grid=grid, seed=seed, lengths=lengths, covered=covered)


def evaluate_methods(
    data: ObservedData,
    crit,
    stream: RngStream,
    methods: tuple[str, ...] = METHODS,
    q_draws: int = 100_000,
    gibbs_draws: int = 2000,
    gibbs_burn_in: int = 500,
) -> dict[str, IntervalEstimate]:
    """Evaluate the requested interval methods on one realized experiment.

    Reference single-experiment path (no caching, no batching); the
    stream children follow the same layout the simulation harness uses
    for one experiment.
    """
    plan = _methods_plan(tuple(methods))
    out: dict[str, IntervalEstimate] = {}
    if plan["neyman"]:
        out["Neyman"] = neyman_interval(data)
    if plan["noint"]:
        out.update(adjusted_intervals(data, False, plan["noint"]))
    if plan["interact"]:
        out.update(adjusted_intervals(data, True, plan["interact"]))
    if plan["ldr"]:
        out["LDR"] = ldr_interval(data, crit, stream.derive(_EXP_LDR), n_draws=q_draws)
    for model in plan["bayes"]:
        posterior = tau_posterior(
            stream.derive(_EXP_CHAIN[model]),
            data,
            model,
            PriorSpec(),
            gibbs_draws,
            gibbs_burn_in,
        )
        out[model] = credible_interval(posterior)
    return {name: out[name] for name in methods if name in out}


# ---------------------------------------------------------------------------
# Summaries: balanced ANOVA and main-effect tables
# ---------------------------------------------------------------------------


@dataclass
class AnovaTable:
    """Sums of squares of one metric by source, with percentage shares.

    Sources: method, the three crossed factors, their joint interaction,
    dataset-within-cell, and experiment-within-dataset. The seven
    components add up to the total (balanced design). ``degenerate`` is
    set when the metric has no variation at all, in which case the
    percentages are reported as zero.
    """

    ss_method: float
    ss_e: float
    ss_f: float
    ss_g: float
    ss_interaction: float
    ss_data: float
    ss_experiment: float
    ss_total: float
    percentages: dict[str, float] = field(default_factory=dict)
    degenerate: bool = False

    def components(self) -> dict[str, float]:
        return {
            "method": self.ss_method,
            "e": self.ss_e,
            "f": self.ss_f,
            "g": self.ss_g,
            "interaction": self.ss_interaction,
            "data": self.ss_data,
            "experiment": self.ss_experiment,
        }


def _metric_array(records, metric: str) -> np.ndarray:
    """Dense [m,e,f,g,d,r] metric values from a ResultSet or record iterable."""
    if metric not in ("length", "coverage"):
        raise ValueError(f"metric must be 'length' or 'coverage', got {metric!r}")
    if isinstance(records, ResultSet):
        return (
            records.lengths if metric == "length" else records.covered.astype(float)
        )
    if isinstance(records, np.ndarray):
        if records.ndim != 6:
            raise GridBalanceError(f"expected a 6-d metric array, got shape {records.shape}")
        return records.astype(float)
    records = list(records)
    if not records:
        raise GridBalanceError("no records")
    shape = tuple(
        max(getattr(rec, name) for rec in records) + 1 for name in "mefgdr"
    )
    values = np.full(shape, np.nan)
    for rec in records:
        idx = (rec.m, rec.e, rec.f, rec.g, rec.d, rec.r)
        if not np.isnan(values[idx]):
            raise GridBalanceError(f"duplicate record at indices {idx}")
        values[idx] = rec.length if metric == "length" else float(rec.covered)
    if np.isnan(values).any():
        missing = int(np.isnan(values).sum())
        raise GridBalanceError(f"incomplete grid: {missing} of {values.size} cells missing")
    return values


def anova(records, metric: str) -> AnovaTable:
    """Balanced decomposition of a metric into the seven variation sources.

    Uses the exact balanced-design identities: each factor's sum of
    squares comes from its marginal means around the grand mean; the
    interaction term pools every interaction among method and the three
    factors; dataset and experiment terms are nested deviations.
    """
    t = _metric_array(records, metric)
    M, E, F, G, D, R = t.shape
    grand = t.mean()
    mean_m = t.mean(axis=(1, 2, 3, 4, 5))
    mean_e = t.mean(axis=(0, 2, 3, 4, 5))
    mean_f = t.mean(axis=(0, 1, 3, 4, 5))
    mean_g = t.mean(axis=(0, 1, 2, 4, 5))
    cell_means = t.mean(axis=(4, 5))
    data_means = t.mean(axis=5)

    ss_m = E * F * G * D * R * float(((mean_m - grand) ** 2).sum())
    ss_e = M * F * G * D * R * float(((mean_e - grand) ** 2).sum())
    ss_f = M * E * G * D * R * float(((mean_f - grand) ** 2).sum())
    ss_g = M * E * F * D * R * float(((mean_g - grand) ** 2).sum())
    interaction_dev = (
        cell_means
        - mean_m[:, None, None, None]
        - mean_e[None, :, None, None]
        - mean_f[None, None, :, None]
        - mean_g[None, None, None, :]
        + 3.0 * grand
    )
    ss_interaction = D * R * float((interaction_dev**2).sum())
    ss_data = R * float(((data_means - cell_means[..., None]) ** 2).sum())
    ss_experiment = float(((t - data_means[..., None]) ** 2).sum())
    ss_total = float(((t - grand) ** 2).sum())

    table = AnovaTable(
        ss_method=ss_m,
        ss_e=ss_e,
        ss_f=ss_f,
        ss_g=ss_g,
        ss_interaction=ss_interaction,
        ss_data=ss_data,
        ss_experiment=ss_experiment,
        ss_total=ss_total,
    )
    if ss_total <= 0.0:
        table.degenerate = True
        table.percentages = {name: 0.0 for name in table.components()}
    else:
        table.percentages = {
            name: 100.0 * value / ss_total for name, value in table.components().items()
        }
    return table


def _resolve_methods(records, methods) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(records, ResultSet):
        return records.lengths, records.grid.methods
    if methods is None:
        raise BaselineError("method labels are required when passing raw records")
    return _metric_array(records, "length"), tuple(methods)


def main_effects_length(records, methods=None) -> dict[str, float]:
    """Mean interval length per method, as a percentage of the baseline method's mean.

    The baseline is the unadjusted mean-difference method ("Neyman"),
    reported as exactly 100.
    """
    lengths, method_names = _resolve_methods(records, methods)
    if "Neyman" not in method_names:
        raise BaselineError("length main effects need the Neyman baseline among the methods")
    means = lengths.mean(axis=(1, 2, 3, 4, 5))
    baseline = means[method_names.index("Neyman")]
    return {name: float(100.0 * means[i] / baseline) for i, name in enumerate(method_names)}


def main_effects_coverage(records, methods=None) -> dict[str, float]:
    """Mean coverage per method, in percentage points relative to the nominal 95%."""
    if isinstance(records, ResultSet):
        coverage = records.covered.astype(float)
        method_names = records.grid.methods
    else:
        coverage, method_names = _metric_array(records, "coverage"), tuple(methods or ())
        if not method_names:
            raise BaselineError("method labels are required when passing raw records")
    means = coverage.mean(axis=(1, 2, 3, 4, 5))
    return {name: float(100.0 * (means[i] - 0.95)) for i, name in enumerate(method_names)}


def enumeration_check(X, outcomes: PotentialOutcomes, crit) -> dict:
    """Exact small-n check: average the mean-difference estimate over the acceptance set.

    With equal arm sizes the acceptance set is closed under swapping the
    arms, so the average equals the SATE exactly; the returned gap should
    be zero to floating-point accuracy.
    """
    allocations = enumerate_acceptance_set(X, crit)
    n = X.shape[0]
    total = comb(n, crit.n1)
    if allocations.shape[0] == 0:
        return {
            "set_size": 0,
            "total_allocations": total,
            "acceptance_fraction": 0.0,
            "mean_estimate": None,
            "sate": outcomes.sate,
            "gap": None,
        }
    Wf = allocations.astype(float)
    estimates = Wf @ outcomes.y1 / crit.n1 - (1.0 - Wf) @ outcomes.y0 / crit.n0
    mean_estimate = float(estimates.mean())
    return {
        "set_size": int(allocations.shape[0]),
        "total_allocations": total,
        "acceptance_fraction": allocations.shape[0] / total,
        "mean_estimate": mean_estimate,
        "sate": outcomes.sate,
        "gap": mean_estimate - outcomes.sate,
    }


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_results_csv(path, results: ResultSet) -> None:
    """One row per record, sorted by (m, e, f, g, d, r).

    The first line is a provenance comment carrying the seed and the
    configuration hash; the header follows. ``covered`` is 0/1.
    """
    grid = results.grid
    M, E, F, G, D, R = results.lengths.shape
    with open(path, "w") as fh:
        fh.write(f"# seed={results.seed} config={results.config_hash}\n")
        fh.write("m,e,f,g,d,r,method,length,covered\n")
        for m in range(M):
            name = grid.methods[m]
            for e in range(E):
                for f in range(F):
                    for g in range(G):
                        for d in range(D):
                            lengths = results.lengths[m, e, f, g, d]
                            covs = results.covered[m, e, f, g, d]
                            fh.writelines(
                                f"{m},{e},{f},{g},{d},{r},{name},"
                                f"{float(lengths[r])!r},{int(covs[r])}\n"
                                for r in range(R)
                            )


def summary_dict(results: ResultSet) -> dict:
    """The run summary: both ANOVA tables, both main-effect tables, and provenance."""
    summary = {
        "anova_length": _anova_as_dict(anova(results, "length")),
        "anova_coverage": _anova_as_dict(anova(results, "coverage")),
        "main_effects_length": main_effects_length(results),
        "main_effects_coverage": main_effects_coverage(results),
        "grid": asdict(results.grid),
        "seed": results.seed,
        "config_hash": results.config_hash,
    }
    return summary


def _anova_as_dict(table: AnovaTable) -> dict:
    out = {f"ss_{name}": value for name, value in table.components().items()}
    out["ss_total"] = table.ss_total
    out["percentages"] = table.percentages
    out["degenerate"] = table.degenerate
    return out


def write_summary_json(path, results: ResultSet) -> None:
    with open(path, "w") as fh:
        json.dump(summary_dict(results), fh, indent=2, sort_keys=True)
        fh.write("\n")


def print_progress(done: int, total: int) -> None:
    """Single-line progress indicator for interactive runs."""
    end = "\n" if done == total else ""
    print(f"\r{done}/{total} units", end=end, file=sys.stderr, flush=True)
