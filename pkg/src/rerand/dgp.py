"""Synthetic experiment data: covariates, potential outcomes, and file round-trips.

Each dataset fixes an n x K covariate matrix and both potential outcome
vectors once; only the treatment allocation varies across the repeated
experiments run on that dataset. Outcomes follow an additive linear
model in the covariates with either a constant treatment effect ("DGP1")
or an effect linear in the centered covariates ("DGP2"), with optional
unit-level effect noise scaled relative to the outcome noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .streams import RngStream

__all__ = [
    "DgpConfig",
    "DgpConstants",
    "PotentialOutcomes",
    "COVARIATE_DISTS",
    "DGPS",
    "LAMBDA_MODES",
    "build_constants",
    "generate_covariates",
    "generate_outcomes",
    "save_dataset",
    "load_dataset",
    "save_observed",
    "load_observed",
]

COVARIATE_DISTS = ("normal01", "exp1")
DGPS = ("DGP1", "DGP2")
LAMBDA_MODES = ("zero", "scaled")

# Slope pattern for the covariate-linear effect component, cycled to K.
_ETA_CYCLE = (1.0, 0.5, -0.5)


@dataclass(frozen=True)
class DgpConfig:
    """One simulation setting for dataset generation."""

    dgp: str
    n: int
    K: int
    cov_dist: str
    r0_sq: float
    lambda_mode: str
    c: float

    def __post_init__(self):
        if self.dgp not in DGPS:
            raise ValueError(f"dgp must be one of {DGPS}, got {self.dgp!r}")
        if self.cov_dist not in COVARIATE_DISTS:
            raise ValueError(f"cov_dist must be one of {COVARIATE_DISTS}, got {self.cov_dist!r}")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(
                f"lambda_mode must be one of {LAMBDA_MODES}, got {self.lambda_mode!r}"
            )
        if self.n < 4 or self.n % 2 != 0:
            raise ValueError(f"n must be even and >= 4, got {self.n}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 0.0 < self.r0_sq < 1.0:
            raise ValueError(f"r0_sq must be in (0, 1), got {self.r0_sq}")
        if self.c < 0.0:
            raise ValueError(f"c must be >= 0, got {self.c}")


@dataclass(frozen=True)
class DgpConstants:
    """Derived constants shared by every dataset of a setting."""

    xi: np.ndarray
    eta: np.ndarray
    sigma_eps_sq: float
    sigma_u_sq: float
    lam: float
    x_mean: np.ndarray


@dataclass(frozen=True)
class PotentialOutcomes:
    """Both potential outcome vectors of a dataset and their realized SATE."""

    y0: np.ndarray
    y1: np.ndarray
    sate: float


def build_constants(cfg: DgpConfig) -> DgpConstants:
    """Constants implied by a setting.

    The outcome noise variance K(1 - r0_sq)/r0_sq makes r0_sq the
    super-population squared multiple correlation between the control
    outcome and the covariates (the covariate-sum component has variance
    K under both covariate distributions). In "scaled" mode the average
    effect is 0.3 * sqrt(50/n) standard deviations of the control
    outcome, whose super-population variance is K/r0_sq; the analytic
    value is used, not a sample estimate, since the effect size is a
    population constant.
    """
    sigma_eps_sq = cfg.K * (1.0 - cfg.r0_sq) / cfg.r0_sq
    if cfg.lambda_mode == "zero":
        lam = 0.0
    else:
        lam = 0.3 * np.sqrt(50.0 / cfg.n) * np.sqrt(cfg.K / cfg.r0_sq)
    reps = -(-cfg.K // len(_ETA_CYCLE))
    eta = np.array((_ETA_CYCLE * reps)[: cfg.K])
    x_mean = np.zeros(cfg.K) if cfg.cov_dist == "normal01" else np.ones(cfg.K)
    return DgpConstants(
        xi=np.ones(cfg.K),
        eta=eta,
        sigma_eps_sq=sigma_eps_sq,
        sigma_u_sq=cfg.c * sigma_eps_sq,
        lam=float(lam),
        x_mean=x_mean,
    )


def generate_covariates(stream: RngStream, cfg: DgpConfig) -> np.ndarray:
    """n x K covariates, i.i.d. per entry from the configured distribution."""
    gen = stream.generator
    if cfg.cov_dist == "normal01":
        return gen.standard_normal((cfg.n, cfg.K))
    return gen.standard_exponential((cfg.n, cfg.K))


def generate_outcomes(stream: RngStream, cfg: DgpConfig, X: np.ndarray) -> PotentialOutcomes:
    """Potential outcomes for a fixed covariate matrix.

    The outcome noise matches the covariate family: Gaussian when the
    covariates are Gaussian, centered unit exponential otherwise, scaled
    to the variance from ``build_constants``. Effect noise is always
    Gaussian. Both noise vectors are drawn even when their scale is zero
    so that a setting's stream consumption does not depend on ``c``.
    """
    if X.shape != (cfg.n, cfg.K):
        raise ValueError(f"X must have shape ({cfg.n}, {cfg.K}), got {X.shape}")
    consts = build_constants(cfg)
    gen = stream.generator
    sigma_eps = np.sqrt(consts.sigma_eps_sq)
    if cfg.cov_dist == "normal01":
        eps = sigma_eps * gen.standard_normal(cfg.n)
    else:
        eps = sigma_eps * (gen.standard_exponential(cfg.n) - 1.0)
    u = np.sqrt(consts.sigma_u_sq) * gen.standard_normal(cfg.n)
    y0 = X @ consts.xi + eps
    if cfg.dgp == "DGP1":
        y1 = y0 + consts.lam + u
    else:
        y1 = y0 + consts.lam + (X - consts.x_mean) @ consts.eta + u
    return PotentialOutcomes(y0=y0, y1=y1, sate=float(np.mean(y1 - y0)))


# ---------------------------------------------------------------------------
# Columnar text round-trips
#
# Self-describing format: '#'-prefixed header lines (a tag, a JSON metadata
# object, and the column names), then one whitespace-separated row per unit
# with full float precision.
# ---------------------------------------------------------------------------

_DATASET_TAG = "rerand-dataset v1"
_OBSERVED_TAG = "rerand-observed v1"


def _write_columnar(path, tag: str, meta: dict, columns: list[str], table: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {tag}\n")
        fh.write(f"# {json.dumps(meta, sort_keys=True)}\n")
        fh.write(f"# columns: {' '.join(columns)}\n")
        for row in table:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _read_columnar(path, tag: str) -> tuple[dict, list[str], np.ndarray]:
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# {tag}":
            raise ValueError(f"{path}: expected header '# {tag}', got {first!r}")
        meta = json.loads(fh.readline().strip().lstrip("# "))
        columns_line = fh.readline().strip()
        columns = columns_line.removeprefix("# columns:").split()
        table = np.loadtxt(fh, ndmin=2)
    return meta, columns, table


def save_dataset(
    path,
    cfg: DgpConfig,
    X: np.ndarray,
    outcomes: PotentialOutcomes,
    lineage: dict | None = None,
) -> None:
    """Write a dataset (covariates plus both potential outcomes) for later audit."""
    meta = {"config": asdict(cfg), "lineage": lineage or {}}
    columns = [f"x{j + 1}" for j in range(cfg.K)] + ["y0", "y1"]
    table = np.column_stack([X, outcomes.y0, outcomes.y1])
    _write_columnar(path, _DATASET_TAG, meta, columns, table)


def load_dataset(path) -> tuple[DgpConfig, np.ndarray, PotentialOutcomes, dict]:
    """Read a dataset written by ``save_dataset``; SATE is recomputed from the rows."""
    meta, columns, table = _read_columnar(path, _DATASET_TAG)
    cfg = DgpConfig(**meta["config"])
    if len(columns) != cfg.K + 2 or table.shape[1] != cfg.K + 2:
        raise ValueError(f"{path}: expected {cfg.K + 2} columns, got {table.shape[1]}")
    X = table[:, : cfg.K]
    y0 = table[:, cfg.K]
    y1 = table[:, cfg.K + 1]
    outcomes = PotentialOutcomes(y0=y0, y1=y1, sate=float(np.mean(y1 - y0)))
    return cfg, X, outcomes, meta.get("lineage", {})


def save_observed(path, X: np.ndarray, w: np.ndarray, y_obs: np.ndarray) -> None:
    """Write one realized experiment: covariates, assignment, observed outcomes."""
    n, K = X.shape
    meta = {"n": int(n), "K": int(K)}
    columns = [f"x{j + 1}" for j in range(K)] + ["w", "y_obs"]
    table = np.column_stack([X, np.asarray(w, dtype=float), y_obs])
    _write_columnar(path, _OBSERVED_TAG, meta, columns, table)


def load_observed(path):
    """Read a realized experiment written by ``save_observed``."""
    from .estimators import ObservedData

    meta, columns, table = _read_columnar(path, _OBSERVED_TAG)
    K = int(meta["K"])
    if table.shape[1] != K + 2:
        raise ValueError(f"{path}: expected {K + 2} columns, got {table.shape[1]}")
    return ObservedData(X=table[:, :K], w=table[:, K].astype(np.int8), y_obs=table[:, K + 1])
