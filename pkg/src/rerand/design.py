"""Covariate-balanced treatment allocation by rejection of imbalanced draws.

The balance statistic is the scaled Mahalanobis distance between treated
and control covariate means in the metric of the finite-population
covariance of the covariates. An allocation is accepted when the
statistic falls below a threshold, typically a lower-tail chi-square
quantile so that only the best-balanced fraction of allocations remains;
the final assignment is uniform on that acceptance set.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb, ceil

import numpy as np
from scipy.linalg import solve_triangular

from .errors import AcceptanceFailureError, EnumerationSizeError, SingularCovariatesError
from .streams import RngStream, chisq_quantile

__all__ = [
    "BalanceCriterion",
    "finite_population_covariance",
    "covariate_mean_difference",
    "mahalanobis",
    "build_criterion",
    "default_max_tries",
    "draw_accepted_allocation",
    "enumerate_acceptance_set",
]

ENUMERATION_LIMIT = 10**6


def as_covariates(X) -> np.ndarray:
    """Validate and return an n x K float covariate matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"covariates must be a 2-d array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates must be finite")
    return X


def as_allocation(w, n: int) -> np.ndarray:
    """Validate and return a length-n binary assignment vector."""
    w = np.asarray(w)
    if w.shape != (n,):
        raise ValueError(f"allocation must have shape ({n},), got {w.shape}")
    if not np.all((w == 0) | (w == 1)):
        raise ValueError("allocation entries must be 0 or 1")
    return w.astype(np.int8, copy=False)


@dataclass(frozen=True)
class BalanceCriterion:
    """Acceptance rule for allocations: balance statistic <= ``threshold``.

    ``sxx_factor`` is the lower Cholesky factor of the finite-population
    covariate covariance, computed once per dataset and reused for every
    distance evaluation. ``p_accept`` records the nominal acceptance
    probability the threshold was derived from, when known.
    """

    sxx_factor: np.ndarray
    threshold: float
    n1: int
    n0: int
    p_accept: float | None = None

    @property
    def n(self) -> int:
        return self.n1 + self.n0

    @property
    def n_covariates(self) -> int:
        return self.sxx_factor.shape[0]


def finite_population_covariance(X) -> np.ndarray:
    """Covariance of the covariate rows over the fixed units, divisor n - 1."""
    X = as_covariates(X)
    n = X.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 units, got {n}")
    centered = X - X.mean(axis=0)
    return centered.T @ centered / (n - 1)


def _diagnose_singular_columns(X: np.ndarray) -> list[int]:
    """Identify covariate columns that break positive definiteness."""
    X = as_covariates(X)
    centered = X - X.mean(axis=0)
    scale = np.abs(X).max(axis=0) + 1.0
    variances = (centered**2).sum(axis=0)
    bad = [int(j) for j in np.nonzero(variances <= 1e-24 * scale**2)[0]]
    if bad:
        return bad
    # Remaining failures are cross-column dependence; pivoted QR ranks the
    # columns and everything pivoted past the numerical rank is dependent.
    from scipy.linalg import qr

    _, R, piv = qr(centered, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * 1e-10 if diag.size and diag[0] > 0 else 0.0
    rank = int(np.sum(diag > tol))
    return sorted(int(j) for j in piv[rank:])


def factor_covariance(S: np.ndarray, X=None) -> np.ndarray:
    """Lower Cholesky factor of S, raising ``SingularCovariatesError`` when not SPD."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        columns = _diagnose_singular_columns(X) if X is not None else []
        raise SingularCovariatesError(
            "covariate covariance is not positive definite"
            + (f"; offending columns: {columns}" if columns else ""),
            columns=columns,
        ) from None


def covariate_mean_difference(X, w) -> np.ndarray:
    """Treated-minus-control covariate mean difference for allocation ``w``."""
    X = as_covariates(X)
    w = as_allocation(w, X.shape[0])
    n1 = int(w.sum())
    n0 = X.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("both groups must be nonempty")
    treated_sum = w @ X
    return treated_sum / n1 - (X.sum(axis=0) - treated_sum) / n0


def mahalanobis(X, w, crit: BalanceCriterion) -> float:
    """Balance statistic (n/4) d' Sxx^{-1} d with d the covariate mean difference.

    Evaluated via one triangular solve against the criterion's Cholesky
    factor, so a dataset's factorization is shared by all allocations.
    """
    d = covariate_mean_difference(X, w)
    y = solve_triangular(crit.sxx_factor, d, lower=True)
    n = X.shape[0] if np.ndim(X) == 2 else len(X)
    return float(n / 4.0 * (y @ y))


def _mahalanobis_from_treated_sums(
    treated_sums: np.ndarray, col_sums: np.ndarray, crit: BalanceCriterion
) -> np.ndarray:
    """Batch of balance statistics from per-allocation treated covariate sums."""
    d = treated_sums * (1.0 / crit.n1 + 1.0 / crit.n0) - col_sums / crit.n0
    y = solve_triangular(crit.sxx_factor, d.T, lower=True)
    return crit.n / 4.0 * (y * y).sum(axis=0)


def build_criterion(X, n1: int, p_accept: float) -> BalanceCriterion:
    """Balance criterion with threshold at the ``p_accept`` chi-square quantile.

    The chi-square reference uses K degrees of freedom (the number of
    covariates), matching the asymptotic law of the balance statistic
    under complete randomization.
    """
    X = as_covariates(X)
    n, K = X.shape
    if not 0 < p_accept < 1:
        raise ValueError(f"p_accept must be in (0, 1), got {p_accept}")
    if not 0 < n1 < n:
        raise ValueError(f"n1 must be strictly between 0 and {n}, got {n1}")
    S = finite_population_covariance(X)
    factor = factor_covariance(S, X)
    threshold = chisq_quantile(K, p_accept)
    return BalanceCriterion(
        sxx_factor=factor, threshold=threshold, n1=n1, n0=n - n1, p_accept=p_accept
    )


def default_max_tries(p_accept: float) -> int:
    """Default rejection budget: 100 times the expected number of tries."""
    return 100 * ceil(1.0 / p_accept)


def draw_accepted_allocation(
    stream: RngStream, X, crit: BalanceCriterion, max_tries: int, batch: int = 128
) -> tuple[np.ndarray, int]:
    """Rejection-sample a uniform allocation until the balance criterion accepts.

    Candidate allocations are uniform over all ways to treat exactly
    ``crit.n1`` of the n units (each candidate an independent shuffle of a
    fixed 0/1 template). Returns the first accepted allocation and the
    number of candidates drawn, including the accepted one. Candidates are
    evaluated in fixed-size batches purely for speed; the accepted draw is
    identical to one-at-a-time sampling from the same stream.

    Raises
    ------
    AcceptanceFailureError
        If no candidate within ``max_tries`` meets the threshold. The
        error carries the smallest statistic seen; an allocation that
        fails the budget is never silently returned.
    """
    X = as_covariates(X)
    n = X.shape[0]
    if max_tries < 1:
        raise ValueError(f"max_tries must be >= 1, got {max_tries}")
    if crit.n != n:
        raise ValueError(f"criterion built for n={crit.n}, data has n={n}")
    gen = stream.generator
    template = np.zeros(n, dtype=np.int8)
    template[: crit.n1] = 1
    tiled = np.tile(template, (batch, 1))
    col_sums = X.sum(axis=0)
    best = np.inf
    tries_used = 0
    while tries_used < max_tries:
        m = min(batch, max_tries - tries_used)
        W = gen.permuted(tiled[:m], axis=1)
        dists = _mahalanobis_from_treated_sums(W @ X, col_sums, crit)
        accepted = np.nonzero(dists <= crit.threshold)[0]
        if accepted.size:
            i = int(accepted[0])
            return W[i], tries_used + i + 1
        best = min(best, float(dists.min()))
        tries_used += m
    raise AcceptanceFailureError(
        f"no allocation with balance statistic <= {crit.threshold:.6g} "
        f"in {max_tries} tries (best seen {best:.6g})",
        best_distance=best,
        tries=max_tries,
    )


def enumerate_acceptance_set(X, crit: BalanceCriterion) -> np.ndarray:
    """All allocations meeting the criterion, as rows in lexicographic order.

    Intended for small n (the allocation count is capped at one million);
    it is the exact-enumeration oracle against which the rejection sampler
    is validated.
    """
    X = as_covariates(X)
    n = X.shape[0]
    if crit.n != n:
        raise ValueError(f"criterion built for n={crit.n}, data has n={n}")
    total = comb(n, crit.n1)
    if total > ENUMERATION_LIMIT:
        raise EnumerationSizeError(
            f"C({n}, {crit.n1}) = {total} allocations exceeds the enumeration cap "
            f"of {ENUMERATION_LIMIT}"
        )
    col_sums = X.sum(axis=0)
    accepted = []
    chunk = []
    chunk_size = 4096

    def flush():
        if not chunk:
            return
        W = np.zeros((len(chunk), n), dtype=np.int8)
        for row, idx in enumerate(chunk):
            W[row, list(idx)] = 1
        dists = _mahalanobis_from_treated_sums(W @ X, col_sums, crit)
        accepted.append(W[dists <= crit.threshold])
        chunk.clear()

    for idx in combinations(range(n), crit.n1):
        chunk.append(idx)
        if len(chunk) >= chunk_size:
            flush()
    flush()
    W = np.concatenate(accepted, axis=0) if accepted else np.zeros((0, n), dtype=np.int8)
    if W.shape[0]:
        order = np.lexsort(W.T[::-1])
        W = W[order]
    return W
