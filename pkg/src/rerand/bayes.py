"""Model-based Bayesian inference for the sample average treatment effect.

Two Gaussian outcome models are supported: an additive model on raw
covariates ("NointB") and a model with arm-specific slopes on centered
covariates ("IntB"). A two-block Gibbs sampler draws the regression
coefficients jointly from their exact multivariate-normal full
conditional and each arm's error variance from its inverse-gamma full
conditional. For every posterior draw the unobserved potential outcome
of each unit is imputed deterministically under the conservative
convention that a unit's two potential outcomes share the same
standardized residual; averaging the imputed effects gives one posterior
sample of the SATE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CollinearDesignError, DegenerateDesignError, SampleSizeError
from .estimators import (
    IntervalEstimate,
    ObservedData,
    interaction_design,
    noint_design,
    ols_fit,
)
from .streams import RngStream

__all__ = [
    "PriorSpec",
    "PosteriorDraw",
    "TauPosterior",
    "MODELS",
    "gibbs_sample",
    "impute_tau",
    "tau_posterior",
    "gibbs_tau_batch",
    "credible_interval",
    "DEFAULT_DRAWS",
    "DEFAULT_BURN_IN",
]

MODELS = ("NointB", "IntB")

# Defaults sized so a full simulation cell stays tractable while the
# conjugacy oracles still pass comfortably.
DEFAULT_DRAWS = 2000
DEFAULT_BURN_IN = 500

_MIN_INIT_VARIANCE = 1e-8


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors: N(0, coef_sd^2) per coefficient, inverse-gamma variances.

    The variance prior is inverse-gamma with density proportional to
    x^(-shape-1) exp(-scale/x).
    """

    coef_sd: float = 100.0
    var_shape: float = 1.0
    var_scale: float = 0.01

    def __post_init__(self):
        if self.coef_sd <= 0 or self.var_shape <= 0 or self.var_scale <= 0:
            raise ValueError("all prior parameters must be positive")


@dataclass
class PosteriorDraw:
    """One joint draw of the model parameters.

    ``delta`` (the arm-1 slope offsets) is None for the additive model.
    """

    alpha0: float
    gamma: float
    beta0: np.ndarray
    delta: np.ndarray | None
    sigma0_sq: float
    sigma1_sq: float


@dataclass
class TauPosterior:
    """Posterior samples of the SATE from one chain."""

    samples: np.ndarray
    H: int
    burn_in: int
    method: str


def _model_design(model: str, X: np.ndarray, w: np.ndarray) -> np.ndarray:
    if model == "NointB":
        return noint_design(X, w)
    if model == "IntB":
        return interaction_design(X, w)
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def _check_data(model: str, data: ObservedData) -> None:
    n, K = data.n, data.n_covariates
    p = K + 2 if model == "NointB" else 2 * K + 2
    if data.n1 < 2 or data.n0 < 2:
        raise DegenerateDesignError("each arm needs at least 2 units")
    if n <= p:
        raise DegenerateDesignError(
            f"model {model} has {p} coefficients; need n > {p}, got n={n}"
        )


def _suff_stats(Z: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Per-arm Gram matrices, design-response products, and squared norms."""
    mask1 = w == 1
    Z0, Z1 = Z[~mask1], Z[mask1]
    y0, y1 = y[~mask1], y[mask1]
    return (
        Z0.T @ Z0,
        Z0.T @ y0,
        float(y0 @ y0),
        Z1.T @ Z1,
        Z1.T @ y1,
        float(y1 @ y1),
    )


def _initial_state(Z: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float, float]:
    """OLS starting point with per-arm mean squared residuals as variances."""
    fit = ols_fit(Z, y)
    resid = fit.residuals
    s0 = max(float((resid[w == 0] ** 2).mean()), _MIN_INIT_VARIANCE)
    s1 = max(float((resid[w == 1] ** 2).mean()), _MIN_INIT_VARIANCE)
    return fit.coefficients, s0, s1


def draw_coefficients(
    z: np.ndarray,
    prior_prec: np.ndarray,
    G0: np.ndarray,
    b0: np.ndarray,
    s0: float,
    G1: np.ndarray,
    b1: np.ndarray,
    s1: float,
) -> np.ndarray:
    """One draw from the coefficient full conditional, using standard normals ``z``.

    The conditional is normal with precision ``prior_prec + G0/s0 + G1/s1``
    and mean solving that precision against ``b0/s0 + b1/s1``. With empty
    data (zero Gram matrices) this reduces to a prior draw.
    """
    lam = prior_prec + G0 / s0 + G1 / s1
    rhs = b0 / s0 + b1 / s1
    L = np.linalg.cholesky(lam)
    v = solve_triangular(L, rhs, lower=True)
    return solve_triangular(L.T, v + z)


def _gibbs_arrays(
    stream: RngStream,
    data: ObservedData,
    model: str,
    prior: PriorSpec,
    H: int,
    burn_in: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run one chain; returns coefficient draws (H, p) and variance draws (H,) per arm.

    Random input layout per chain (fixed, so alternative execution paths
    can reproduce it): standard normals of shape (iterations, p), then
    the arm-0 gamma variates, then the arm-1 gamma variates.
    """
    _check_data(model, data)
    Z = _model_design(model, data.X, data.w)
    G0, b0, yty0, G1, b1, yty1 = _suff_stats(Z, data.y_obs, data.w)
    theta, s0, s1 = _initial_state(Z, data.y_obs, data.w)
    p = Z.shape[1]
    n0, n1 = data.n0, data.n1
    iters = burn_in + H
    gen = stream.generator
    normals = gen.standard_normal((iters, p))
    gammas0 = gen.standard_gamma(prior.var_shape + n0 / 2.0, size=iters)
    gammas1 = gen.standard_gamma(prior.var_shape + n1 / 2.0, size=iters)
    prior_prec = np.eye(p) / prior.coef_sd**2

    thetas = np.empty((H, p))
    sig0 = np.empty(H)
    sig1 = np.empty(H)
    for t in range(iters):
        theta = draw_coefficients(normals[t], prior_prec, G0, b0, s0, G1, b1, s1)
        ssr0 = max(yty0 - 2.0 * (theta @ b0) + theta @ G0 @ theta, 0.0)
        ssr1 = max(yty1 - 2.0 * (theta @ b1) + theta @ G1 @ theta, 0.0)
        s0 = (prior.var_scale + ssr0 / 2.0) / gammas0[t]
        s1 = (prior.var_scale + ssr1 / 2.0) / gammas1[t]
        if t >= burn_in:
            h = t - burn_in
            thetas[h] = theta
            sig0[h] = s0
            sig1[h] = s1
    return thetas, sig0, sig1


def gibbs_sample(
    stream: RngStream,
    data: ObservedData,
    model: str,
    prior: PriorSpec = PriorSpec(),
    H: int = DEFAULT_DRAWS,
    burn_in: int = DEFAULT_BURN_IN,
) -> list[PosteriorDraw]:
    """Posterior parameter draws from the two-block Gibbs sampler.

    Block 1 draws all regression coefficients jointly from the exact
    normal full conditional (prior precision plus arm-weighted Gram
    precisions); block 2 draws each arm variance from inverse-gamma
    (shape + n_arm/2, scale + SSR_arm/2). The chain starts at the OLS fit
    of the model design and discards ``burn_in`` iterations.
    """
    thetas, sig0, sig1 = _gibbs_arrays(stream, data, model, prior, H, burn_in)
    K = data.n_covariates
    draws = []
    for h in range(H):
        theta = thetas[h]
        draws.append(
            PosteriorDraw(
                alpha0=float(theta[0]),
                gamma=float(theta[1]),
                beta0=theta[2 : 2 + K].copy(),
                delta=theta[2 + K :].copy() if model == "IntB" else None,
                sigma0_sq=float(sig0[h]),
                sigma1_sq=float(sig1[h]),
            )
        )
    return draws


def _arm_means(
    draw: PosteriorDraw, X: np.ndarray, model: str
) -> tuple[np.ndarray, np.ndarray]:
    """Model mean surfaces mu0(x), mu1(x) for one posterior draw."""
    if model == "NointB":
        base = X @ draw.beta0
        return draw.alpha0 + base, draw.alpha0 + draw.gamma + base
    xc = X - X.mean(axis=0)
    mu0 = draw.alpha0 + xc @ draw.beta0
    mu1 = draw.alpha0 + draw.gamma + xc @ (draw.beta0 + draw.delta)
    return mu0, mu1


def impute_tau(draw: PosteriorDraw, data: ObservedData, model: str) -> float:
    """One posterior SATE sample by imputing each unit's missing outcome.

    Observed outcomes are kept verbatim. The missing outcome reuses the
    unit's observed residual, rescaled by the ratio of arm standard
    deviations, so a draw with equal variances simply shifts the observed
    value by the model's arm-mean gap. No extra predictive noise is
    added: the imputation is deterministic given the draw.
    """
    mu0, mu1 = _arm_means(draw, data.X, model)
    s0 = np.sqrt(draw.sigma0_sq)
    s1 = np.sqrt(draw.sigma1_sq)
    y = data.y_obs
    treated = data.w == 1
    y1 = np.where(treated, y, mu1 + (s1 / s0) * (y - mu0))
    y0 = np.where(treated, mu0 + (s0 / s1) * (y - mu1), y)
    return float(np.mean(y1 - y0))


def tau_posterior(
    stream: RngStream,
    data: ObservedData,
    model: str,
    prior: PriorSpec = PriorSpec(),
    H: int = DEFAULT_DRAWS,
    burn_in: int = DEFAULT_BURN_IN,
) -> TauPosterior:
    """Posterior SATE samples: one Gibbs chain plus per-draw imputation.

    Produces exactly the samples of mapping ``impute_tau`` over
    ``gibbs_sample`` output, with the imputation vectorized across draws.
    """
    thetas, sig0, sig1 = _gibbs_arrays(stream, data, model, prior, H, burn_in)
    samples = _impute_tau_from_arrays(thetas, sig0, sig1, data.X, data.w, data.y_obs, model)
    return TauPosterior(samples=samples, H=H, burn_in=burn_in, method=model)


def _impute_tau_from_arrays(
    thetas: np.ndarray,
    sig0: np.ndarray,
    sig1: np.ndarray,
    X: np.ndarray,
    w: np.ndarray,
    y: np.ndarray,
    model: str,
) -> np.ndarray:
    """Vectorized imputation across all posterior draws of one chain."""
    Z0 = _model_design(model, X, np.zeros(X.shape[0], dtype=np.int8))
    Z1 = _model_design(model, X, np.ones(X.shape[0], dtype=np.int8))
    MU0 = thetas @ Z0.T
    MU1 = thetas @ Z1.T
    s0 = np.sqrt(sig0)[:, None]
    s1 = np.sqrt(sig1)[:, None]
    treated = w == 1
    y1 = np.where(treated[None, :], y[None, :], MU1 + (s1 / s0) * (y[None, :] - MU0))
    y0 = np.where(treated[None, :], MU0 + (s0 / s1) * (y[None, :] - MU1), y[None, :])
    return (y1 - y0).mean(axis=1)


def credible_interval(posterior: TauPosterior, level: float = 0.95) -> IntervalEstimate:
    """Equal-tailed credible interval with the posterior mean as point estimate."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if posterior.H < 100:
        raise SampleSizeError(f"need at least 100 posterior samples, got {posterior.H}")
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(posterior.samples, [tail, 1.0 - tail])
    return IntervalEstimate(
        posterior.method,
        float(posterior.samples.mean()),
        None,
        float(lower),
        float(upper),
    )


def gibbs_tau_batch(
    streams: list[RngStream],
    X: np.ndarray,
    W: np.ndarray,
    Y: np.ndarray,
    model: str,
    prior: PriorSpec = PriorSpec(),
    H: int = DEFAULT_DRAWS,
    burn_in: int = DEFAULT_BURN_IN,
) -> np.ndarray:
    """Posterior SATE samples for many experiments on one dataset, chains in lockstep.

    Rows of ``W`` and ``Y`` are the per-experiment allocations and
    observed outcomes; ``streams[b]`` seeds chain b with the same random
    input layout as the single-chain sampler. Returns an array of shape
    (len(streams), H). Running chains side by side turns the per-iteration
    work into batched small-matrix algebra, which is what makes full
    simulation cells affordable; each chain's statistical procedure is
    identical to ``tau_posterior``.
    """
    B, n = W.shape
    if Y.shape != (B, n) or len(streams) != B:
        raise ValueError("streams, W, and Y must agree on the number of experiments")
    p = X.shape[1] + 2 if model == "NointB" else 2 * X.shape[1] + 2
    if n <= p:
        raise DegenerateDesignError(f"model {model} has {p} coefficients; need n > {p}")
    iters = burn_in + H

    Z = np.empty((B, n, p))
    for b in range(B):
        Z[b] = _model_design(model, X, W[b])
    mask1 = W.astype(float)
    mask0 = 1.0 - mask1
    G0 = np.einsum("bni,bn,bnj->bij", Z, mask0, Z, optimize=True)
    G1 = np.einsum("bni,bn,bnj->bij", Z, mask1, Z, optimize=True)
    b0 = np.einsum("bni,bn->bi", Z, mask0 * Y, optimize=True)
    b1 = np.einsum("bni,bn->bi", Z, mask1 * Y, optimize=True)
    yty0 = (Y * Y * mask0).sum(axis=1)
    yty1 = (Y * Y * mask1).sum(axis=1)
    n0 = mask0.sum(axis=1)
    n1 = mask1.sum(axis=1)
    if np.any(n0 < 2) or np.any(n1 < 2):
        raise DegenerateDesignError("each arm needs at least 2 units in every experiment")

    # Pooled OLS start per experiment, with per-arm residual variances.
    try:
        chol_G = np.linalg.cholesky(G0 + G1)
    except np.linalg.LinAlgError:
        raise CollinearDesignError("batch initialization: some design is rank deficient") from None
    theta = np.linalg.solve(
        np.swapaxes(chol_G, 1, 2), np.linalg.solve(chol_G, (b0 + b1)[..., None])
    )[..., 0]
    ssr0 = np.maximum(yty0 - 2 * (theta * b0).sum(1) + np.einsum("bi,bij,bj->b", theta, G0, theta), 0.0)
    ssr1 = np.maximum(yty1 - 2 * (theta * b1).sum(1) + np.einsum("bi,bij,bj->b", theta, G1, theta), 0.0)
    s0 = np.maximum(ssr0 / n0, _MIN_INIT_VARIANCE)
    s1 = np.maximum(ssr1 / n1, _MIN_INIT_VARIANCE)

    normals = np.empty((B, iters, p))
    gammas0 = np.empty((B, iters))
    gammas1 = np.empty((B, iters))
    for b in range(B):
        gen = streams[b].generator
        normals[b] = gen.standard_normal((iters, p))
        gammas0[b] = gen.standard_gamma(prior.var_shape + n0[b] / 2.0, size=iters)
        gammas1[b] = gen.standard_gamma(prior.var_shape + n1[b] / 2.0, size=iters)
    prior_prec = np.eye(p) / prior.coef_sd**2

    thetas = np.empty((B, H, p))
    sig0 = np.empty((B, H))
    sig1 = np.empty((B, H))
    for t in range(iters):
        lam = prior_prec[None] + G0 / s0[:, None, None] + G1 / s1[:, None, None]
        rhs = b0 / s0[:, None] + b1 / s1[:, None]
        L = np.linalg.cholesky(lam)
        v = np.linalg.solve(L, rhs[..., None])
        theta = np.linalg.solve(np.swapaxes(L, 1, 2), v + normals[:, t, :, None])[..., 0]
        ssr0 = np.maximum(
            yty0 - 2 * (theta * b0).sum(1) + np.einsum("bi,bij,bj->b", theta, G0, theta), 0.0
        )
        ssr1 = np.maximum(
            yty1 - 2 * (theta * b1).sum(1) + np.einsum("bi,bij,bj->b", theta, G1, theta), 0.0
        )
        s0 = (prior.var_scale + ssr0 / 2.0) / gammas0[:, t]
        s1 = (prior.var_scale + ssr1 / 2.0) / gammas1[:, t]
        if t >= burn_in:
            h = t - burn_in
            thetas[:, h] = theta
            sig0[:, h] = s0
            sig1[:, h] = s1

    taus = np.empty((B, H))
    for b in range(B):
        taus[b] = _impute_tau_from_arrays(thetas[b], sig0[b], sig1[b], X, W[b], Y[b], model)
    return taus
