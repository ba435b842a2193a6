"""The limiting law of the mean difference under rerandomization.

After rejecting imbalanced allocations, the standardized mean difference
is no longer normal: its covariate-aligned component is squeezed into a
bounded set. This script samples the limiting mixture law at several
covariate-strength levels and shows how its 0.975 quantile, and with it
the interval width, falls below the normal 1.96.
"""

import numpy as np

from rerand import RngStream, chisq_quantile, q_quantile, sample_q
from rerand.ldr import AsymptoticParams

root = RngStream(99)

K = 3
a = chisq_quantile(K, 0.01)
print(f"K = {K}, threshold a = chi-square 0.01 quantile = {a:.4f}")
print(f"bounded component support: |L| <= sqrt(a) = {np.sqrt(a):.4f}\n")

print(f"{'R^2':>5s} {'q(0.975)':>9s} {'Var(Q)':>8s} {'width vs normal':>16s}")
for r2 in (0.0, 0.25, 0.5, 0.75, 1.0):
    params = AsymptoticParams(v_tau_hat=1.0, r2_hat=r2, K=K, a=a)
    sampler = sample_q(root.derive(int(r2 * 100)), params, 400_000)
    q975 = q_quantile(sampler, 0.975)
    var = sampler.draws.var(ddof=1)
    print(f"{r2:5.2f} {q975:9.4f} {var:8.4f} {100 * q975 / 1.96:15.1f}%")

print(
    "\nWith no covariate signal (R^2 = 0) the law is standard normal and"
    "\nthe quantile is 1.96. As R^2 grows, more of the estimator's"
    "\nvariation lives in the component rerandomization squeezed, and the"
    "\ninterval can be almost arbitrarily short at R^2 = 1."
)

# Without truncation (a -> infinity) the law is standard normal at any R^2.
params = AsymptoticParams(v_tau_hat=1.0, r2_hat=0.6, K=K, a=np.inf)
sampler = sample_q(root.derive(1000), params, 400_000)
print(
    f"\nno truncation check: Var(Q) = {sampler.draws.var(ddof=1):.4f}, "
    f"q(0.975) = {q_quantile(sampler, 0.975):.4f} (both normal values)"
)
