"""Point estimates and 95% intervals for the sample average treatment effect.

Covers the unadjusted mean-difference estimator with its conservative
standard error, and OLS covariate adjustment in two designs (with and
without treatment-covariate interactions) paired with three
heteroskedasticity-robust covariance estimators (EHW, HC2, HC3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .design import as_allocation, as_covariates
from .errors import (
    CollinearDesignError,
    DegenerateDesignError,
    LeverageError,
    VarianceUndefinedError,
)

__all__ = [
    "ObservedData",
    "IntervalEstimate",
    "OlsFit",
    "CRITICAL_VALUE",
    "ROBUST_VARIANTS",
    "mean_difference",
    "neyman_interval",
    "ols_fit",
    "robust_covariance",
    "adjusted_interval",
    "adjusted_intervals",
    "noint_design",
    "interaction_design",
]

# Fixed normal critical value for all 95% intervals; no small-sample
# t correction is applied at any n.
CRITICAL_VALUE = 1.96

ROBUST_VARIANTS = ("EHW", "HC2", "HC3")

_RANK_TOL = 1e-10
_LEVERAGE_TOL = 1e-12


@dataclass
class ObservedData:
    """One realized experiment: covariates, assignment, observed outcomes."""

    X: np.ndarray
    w: np.ndarray
    y_obs: np.ndarray

    def __post_init__(self):
        self.X = as_covariates(self.X)
        n = self.X.shape[0]
        self.w = as_allocation(self.w, n)
        self.y_obs = np.asarray(self.y_obs, dtype=float)
        if self.y_obs.shape != (n,):
            raise ValueError(
                f"y_obs must have shape ({n},), got {self.y_obs.shape}"
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]

    @property
    def n1(self) -> int:
        return int(self.w.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1


@dataclass
class IntervalEstimate:
    """A point estimate with a 95% interval, tagged by method name.

    ``se`` is None for methods whose interval does not come from a
    plug-in standard error (the Bayesian credible intervals).
    ``diagnostics`` carries method-specific extras such as the quantile
    used to scale an interval.
    """

    method: str
    point: float
    se: float | None
    lower: float
    upper: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(
                f"{self.method}: interval bounds out of order "
                f"[{self.lower}, {self.upper}]"
            )

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def mean_difference(data: ObservedData) -> float:
    """Treated mean minus control mean of the observed outcomes."""
    n1, n0 = data.n1, data.n0
    if n1 == 0 or n0 == 0:
        raise DegenerateDesignError("both treatment arms must be nonempty")
    treated_sum = float(data.w @ data.y_obs)
    return treated_sum / n1 - (float(data.y_obs.sum()) - treated_sum) / n0


def neyman_interval(data: ObservedData) -> IntervalEstimate:
    """Mean difference with the conservative standard error sqrt((2/n)(s1^2 + s0^2)).

    s1^2 and s0^2 are the within-arm sample variances (divisor n_w - 1),
    for the standard two-arm design with half the units in each arm.
    """
    if data.n1 < 2 or data.n0 < 2:
        raise VarianceUndefinedError("each arm needs at least 2 units for a sample variance")
    point = mean_difference(data)
    y1 = data.y_obs[data.w == 1]
    y0 = data.y_obs[data.w == 0]
    se = float(np.sqrt((2.0 / data.n) * (y1.var(ddof=1) + y0.var(ddof=1))))
    half = CRITICAL_VALUE * se
    return IntervalEstimate("Neyman", point, se, point - half, point + half)


@dataclass
class OlsFit:
    """Least-squares fit products needed by the sandwich estimators."""

    coefficients: np.ndarray
    residuals: np.ndarray
    hat_diagonals: np.ndarray
    gram_inverse: np.ndarray


def ols_fit(Z, y) -> OlsFit:
    """Least squares of ``y`` on design ``Z`` via rank-revealing (pivoted) QR.

    Raises
    ------
    CollinearDesignError
        If the design is numerically rank deficient (relative diagonal
        decay of the triangular factor below 1e-10); the error names the
        dependent columns.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = Z.shape
    if n <= p:
        raise DegenerateDesignError(f"need more observations than parameters, got n={n}, p={p}")
    Q, R, piv = qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0 or np.any(diag < _RANK_TOL * diag[0]):
        rank = int(np.sum(diag >= _RANK_TOL * diag[0])) if diag[0] > 0 else 0
        columns = sorted(int(j) for j in piv[rank:])
        raise CollinearDesignError(
            f"design is rank deficient (rank {rank} of {p}); dependent columns: {columns}",
            columns=columns,
        )
    coef_perm = solve_triangular(R, Q.T @ y)
    coefficients = np.empty(p)
    coefficients[piv] = coef_perm
    r_inv = solve_triangular(R, np.eye(p))
    gram_inverse = np.empty((p, p))
    gram_inverse[np.ix_(piv, piv)] = r_inv @ r_inv.T
    return OlsFit(
        coefficients=coefficients,
        residuals=y - Z @ coefficients,
        hat_diagonals=(Q * Q).sum(axis=1),
        gram_inverse=gram_inverse,
    )


def _scaled_residuals(fit: OlsFit, variant: str) -> np.ndarray:
    if variant == "EHW":
        return fit.residuals
    one_minus_h = 1.0 - fit.hat_diagonals
    if np.any(one_minus_h < _LEVERAGE_TOL):
        indices = [int(i) for i in np.nonzero(one_minus_h < _LEVERAGE_TOL)[0]]
        raise LeverageError(
            f"leverage of 1 at observations {indices}; {variant} undefined", indices=indices
        )
    if variant == "HC2":
        return fit.residuals / np.sqrt(one_minus_h)
    if variant == "HC3":
        return fit.residuals / one_minus_h
    raise ValueError(f"unknown variant {variant!r}; expected one of {ROBUST_VARIANTS}")


def robust_covariance(fit: OlsFit, Z, variant: str) -> np.ndarray:
    """Heteroskedasticity-robust coefficient covariance (sandwich form).

    The meat uses squared residuals (EHW), residuals inflated by
    1/sqrt(1 - h) (HC2), or by 1/(1 - h) (HC3), with h the hat-matrix
    diagonal. Returned without any sample-size scaling, so square roots
    of the diagonal are coefficient standard errors directly.
    """
    Z = np.asarray(Z, dtype=float)
    e = _scaled_residuals(fit, variant)
    meat = (Z * (e * e)[:, None]).T @ Z
    return fit.gram_inverse @ meat @ fit.gram_inverse


def noint_design(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Design [1, w, x]: additive covariate adjustment."""
    n = X.shape[0]
    return np.column_stack([np.ones(n), w.astype(float), X])


def interaction_design(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Design [1, w, x - xbar, w*(x - xbar)]: full treatment-covariate interaction.

    Centering makes the coefficient on w the average-effect estimate
    rather than the effect at x = 0.
    """
    n = X.shape[0]
    xc = X - X.mean(axis=0)
    wf = w.astype(float)
    return np.column_stack([np.ones(n), wf, xc, wf[:, None] * xc])


_METHOD_TAGS = {
    (False, "EHW"): "NointE",
    (False, "HC2"): "NointH2",
    (False, "HC3"): "NointH3",
    (True, "EHW"): "IntE",
    (True, "HC2"): "IntH2",
    (True, "HC3"): "IntH3",
}


def _interval_from_fit(
    fit: OlsFit, Z: np.ndarray, interaction: bool, variant: str
) -> IntervalEstimate:
    cov = robust_covariance(fit, Z, variant)
    point = float(fit.coefficients[1])
    se = float(np.sqrt(cov[1, 1]))
    half = CRITICAL_VALUE * se
    return IntervalEstimate(
        _METHOD_TAGS[(interaction, variant)], point, se, point - half, point + half
    )


def adjusted_interval(data: ObservedData, interaction: bool, variant: str) -> IntervalEstimate:
    """OLS-adjusted estimate and robust 95% interval for the treatment coefficient.

    ``interaction=False`` regresses the outcome on [1, w, x];
    ``interaction=True`` adds centered treatment-covariate interactions.
    The point estimate is the coefficient on w; its standard error is the
    square root of the corresponding diagonal entry of the requested
    robust covariance.
    """
    builder = interaction_design if interaction else noint_design
    Z = builder(data.X, data.w)
    fit = ols_fit(Z, data.y_obs)
    return _interval_from_fit(fit, Z, interaction, variant)


def adjusted_intervals(
    data: ObservedData, interaction: bool, variants: tuple[str, ...] = ROBUST_VARIANTS
) -> dict[str, IntervalEstimate]:
    """All requested robust-variant intervals from a single fit of one design."""
    builder = interaction_design if interaction else noint_design
    Z = builder(data.X, data.w)
    fit = ols_fit(Z, data.y_obs)
    out = {}
    for variant in variants:
        est = _interval_from_fit(fit, Z, interaction, variant)
        out[est.method] = est
    return out


def _stacked_designs(X: np.ndarray, W: np.ndarray, interaction: bool) -> np.ndarray:
    """Designs for many allocations of one dataset, stacked as (R, n, p)."""
    R, n = W.shape
    K = X.shape[1]
    Wf = W.astype(float)
    if not interaction:
        Z = np.empty((R, n, K + 2))
        Z[:, :, 0] = 1.0
        Z[:, :, 1] = Wf
        Z[:, :, 2:] = X[None]
        return Z
    xc = X - X.mean(axis=0)
    Z = np.empty((R, n, 2 * K + 2))
    Z[:, :, 0] = 1.0
    Z[:, :, 1] = Wf
    Z[:, :, 2 : K + 2] = xc[None]
    Z[:, :, K + 2 :] = Wf[:, :, None] * xc[None]
    return Z


def adjusted_batch(
    X: np.ndarray,
    W: np.ndarray,
    Y: np.ndarray,
    interaction: bool,
    variants: tuple[str, ...],
) -> tuple[dict[str, tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Treatment coefficient and robust standard errors across many experiments.

    Stacked-QR evaluation of ``adjusted_interval`` over all rows of ``W``
    and ``Y`` at once (same estimator, batched linear algebra). Only the
    treatment row of the coefficient covariance is formed: its sandwich
    diagonal entry is sum_i e_i^2 (z_i' g)^2 with g the treatment column
    of the Gram inverse. Returns ``{method tag: (points, ses)}`` plus a
    boolean mask of experiments the batch could not certify (possible
    rank deficiency or unit leverage); callers must re-evaluate those
    through the single-experiment path, which raises the typed errors.
    """
    Z = _stacked_designs(X, W, interaction)
    R, n, p = Z.shape
    Q, Rm = np.linalg.qr(Z)
    diag = np.abs(np.diagonal(Rm, axis1=1, axis2=2))
    bad = diag.min(axis=1) < _RANK_TOL * diag[:, 0]
    safe = ~bad
    # Rank-deficient rows would make the triangular solves blow up; give
    # them a harmless placeholder system, their results are discarded.
    Rm_safe = np.where(safe[:, None, None], Rm, np.eye(p)[None])
    qty = np.einsum("rnp,rn->rp", Q, Y, optimize=True)
    theta = np.linalg.solve(Rm_safe, qty[..., None])[..., 0]
    resid = Y - np.einsum("rnp,rp->rn", Z, theta, optimize=True)
    one_minus_h = 1.0 - (Q * Q).sum(axis=2)
    needs_leverage = any(v != "EHW" for v in variants)
    if needs_leverage:
        bad |= one_minus_h.min(axis=1) < _LEVERAGE_TOL
        one_minus_h = np.maximum(one_minus_h, _LEVERAGE_TOL)
    e1 = np.zeros((R, p, 1))
    e1[:, 1, 0] = 1.0
    u = np.linalg.solve(np.swapaxes(Rm_safe, 1, 2), e1)
    g1 = np.linalg.solve(Rm_safe, u)[..., 0]
    v = np.einsum("rnp,rp->rn", Z, g1, optimize=True)
    points = theta[:, 1]
    out = {}
    for variant in variants:
        if variant == "EHW":
            e = resid
        elif variant == "HC2":
            e = resid / np.sqrt(one_minus_h)
        elif variant == "HC3":
            e = resid / one_minus_h
        else:
            raise ValueError(f"unknown variant {variant!r}; expected one of {ROBUST_VARIANTS}")
        ses = np.sqrt(((v * e) ** 2).sum(axis=1))
        out[_METHOD_TAGS[(interaction, variant)]] = (points, ses)
    return out, bad


def neyman_batch(W: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean difference and conservative standard error across many experiments."""
    Wf = W.astype(float)
    n = W.shape[1]
    n1 = Wf.sum(axis=1)
    n0 = n - n1
    mean1 = (Wf * Y).sum(axis=1) / n1
    mean0 = ((1.0 - Wf) * Y).sum(axis=1) / n0
    var1 = (Wf * (Y - mean1[:, None]) ** 2).sum(axis=1) / (n1 - 1.0)
    var0 = ((1.0 - Wf) * (Y - mean0[:, None]) ** 2).sum(axis=1) / (n0 - 1.0)
    return mean1 - mean0, np.sqrt((2.0 / n) * (var1 + var0))
