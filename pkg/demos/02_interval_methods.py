"""All ten interval methods on one rerandomized experiment.

Generates a dataset, draws one accepted allocation, and prints every
interval estimate side by side: the unadjusted mean difference with its
conservative standard error, the six robust OLS adjustments, the two
Bayesian credible intervals, and the rerandomization-aware mixture-law
interval.
"""

import numpy as np

from rerand import (
    DgpConfig,
    ObservedData,
    RngStream,
    build_criterion,
    generate_covariates,
    generate_outcomes,
)
from rerand.design import default_max_tries, draw_accepted_allocation
from rerand.harness import evaluate_methods

root = RngStream(7)

cfg = DgpConfig(
    dgp="DGP2",          # treatment effect varies linearly with the covariates
    n=100,
    K=3,
    cov_dist="normal01",
    r0_sq=0.5,           # covariates explain half the control-outcome variance
    lambda_mode="scaled",
    c=0.1,               # mild idiosyncratic effect noise
)
X = generate_covariates(root.derive(0), cfg)
outcomes = generate_outcomes(root.derive(0), cfg, X)
print(f"true SATE for this dataset: {outcomes.sate:.4f}")

crit = build_criterion(X, n1=cfg.n // 2, p_accept=0.01)
w, tries = draw_accepted_allocation(root.derive(1), X, crit, default_max_tries(0.01))
print(f"accepted allocation after {tries} tries\n")

data = ObservedData(X, w, np.where(w == 1, outcomes.y1, outcomes.y0))
estimates = evaluate_methods(data, crit, root.derive(2))

print(f"{'method':8s} {'point':>8s} {'se':>8s} {'95% interval':>20s} {'length':>7s} covers")
for name, est in estimates.items():
    se = f"{est.se:8.4f}" if est.se is not None else "       -"
    print(
        f"{name:8s} {est.point:8.4f} {se} "
        f"[{est.lower:8.4f}, {est.upper:8.4f}] {est.length:7.4f} "
        f"{est.covers(outcomes.sate)}"
    )

print(
    "\nThe adjusted methods shorten the interval by removing the"
    "\ncovariate-explained outcome variation; the mixture-law interval"
    f"\nadditionally shrinks its critical value below 1.96 "
    f"(here {estimates['LDR'].diagnostics['q975']:.3f})"
    "\nbecause rerandomization squeezes the covariate-aligned component."
)
