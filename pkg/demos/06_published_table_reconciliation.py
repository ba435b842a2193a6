"""Reconciling the published small-sample efficiency table.

The published study reports method interval lengths as percentages of
the unadjusted baseline at n=50, K=3 (Gaussian covariates, constant
effects): NointE 79.72, IntE 76.93, NointH2 84.06, IntH2 84.03,
NointH3 88.76, IntH3 92.34, LDR 78.86.

Running this package's estimators at the same design lands the
regression-adjusted ratios systematically below the published column
at n=50 (within tolerance at full scale; roughly two points low at the
reduced scale used here). The offset shrinks as n grows and closes, for
every method at once, if the baseline's within-arm variances are
computed with divisor n_w instead of the stated n_w - 1; the baseline's
coverage excess then also moves toward the published +2.93. This script
demonstrates that seed-matched comparison by recomputing the baseline
length both ways on identical runs.

The package itself follows the stated formula (divisor n_w - 1)
everywhere; the divisor swap below is a diagnostic, not an option. The
mixture-law ratio is insensitive to the convention because its variance
estimate equals the baseline's, so the divisor cancels from the ratio.
"""

import numpy as np

import rerand.harness as harness
from rerand import FactorGrid, RngStream
from rerand.harness import METHODS, main_effects_coverage, main_effects_length

PUBLISHED = {
    "NointE": 79.72,
    "NointH2": 84.06,
    "NointH3": 88.76,
    "IntE": 76.93,
    "IntH2": 84.03,
    "IntH3": 92.34,
    "LDR": 78.86,
}

nonbayes = tuple(m for m in METHODS if m not in ("NointB", "IntB"))
grid = FactorGrid(
    n=50,
    K=3,
    cov_dist="normal01",
    dgp="DGP1",
    methods=nonbayes,
    datasets_per_cell=4,          # published scale: 20
    experiments_per_dataset=500,  # published scale: 2000
)

print("run 1: baseline variances with the stated divisor n_w - 1")
res_stated = harness.run_grid(RngStream(20250810), grid, workers=2)
stated = main_effects_length(res_stated)
stated_cov = main_effects_coverage(res_stated)["Neyman"]


def neyman_batch_population_divisor(W, Y):
    """Baseline with within-arm variances over n_w (diagnostic only)."""
    Wf = W.astype(float)
    n = W.shape[1]
    n1 = Wf.sum(axis=1)
    n0 = n - n1
    mean1 = (Wf * Y).sum(axis=1) / n1
    mean0 = ((1.0 - Wf) * Y).sum(axis=1) / n0
    var1 = (Wf * (Y - mean1[:, None]) ** 2).sum(axis=1) / n1
    var0 = ((1.0 - Wf) * (Y - mean0[:, None]) ** 2).sum(axis=1) / n0
    return mean1 - mean0, np.sqrt((2.0 / n) * (var1 + var0))


print("run 2: identical draws, baseline variances with divisor n_w")
original = harness.neyman_batch
harness.neyman_batch = neyman_batch_population_divisor
try:
    res_popvar = harness.run_grid(RngStream(20250810), grid, workers=1)
finally:
    harness.neyman_batch = original
popvar = main_effects_length(res_popvar)
popvar_cov = main_effects_coverage(res_popvar)["Neyman"]

print(f"\n{'method':8s} {'published':>9s} {'stated n_w-1':>12s} {'divisor n_w':>11s}")
for method, target in PUBLISHED.items():
    print(f"{method:8s} {target:9.2f} {stated[method]:12.2f} {popvar[method]:11.2f}")
print(
    f"\nbaseline coverage excess: stated divisor {stated_cov:+.2f} pp, "
    f"divisor n_w {popvar_cov:+.2f} pp, published +2.93 pp"
)
print(
    "\nWith the n_w divisor in the baseline denominator, every ratio"
    "\nmoves onto the published column at once, which is the signature"
    "\nof a baseline-only convention difference rather than a per-method"
    "\nimplementation gap. (At the study's full replication scale the"
    "\nstated-formula ratios already land within the acceptance"
    "\ntolerance; this reduced-scale run exaggerates the offset.)"
)
