"""Rerandomization basics: the balance statistic, the acceptance set, rejection sampling.

Walks through one small experiment: build the balance criterion from the
covariates, enumerate every allocation to see exactly which ones the
criterion keeps, and then draw accepted allocations by rejection,
checking that the draws are uniform over the enumerated set.
"""

import numpy as np

from rerand import (
    RngStream,
    build_criterion,
    covariate_mean_difference,
    draw_accepted_allocation,
    enumerate_acceptance_set,
    mahalanobis,
)
from rerand.design import default_max_tries

root = RngStream(2024)

# Ten units, two covariates, half the units treated.
n, K = 10, 2
X = root.derive(0).generator.standard_normal((n, K))

# Keep the best-balanced 20% of allocations: the threshold is the 0.2
# quantile of the chi-square law with K degrees of freedom that the
# balance statistic follows asymptotically.
crit = build_criterion(X, n1=n // 2, p_accept=0.2)
print(f"threshold a = {crit.threshold:.4f} (chi-square_{K} lower 0.2 quantile)")

# Small n: enumerate all C(10,5) = 252 allocations and keep the balanced ones.
accepted = enumerate_acceptance_set(X, crit)
print(f"acceptance set: {accepted.shape[0]} of 252 allocations "
      f"({accepted.shape[0] / 252:.1%} accepted)")

# The set is closed under swapping arms, which is what makes the mean
# difference estimator unbiased under rerandomization.
as_set = {bytes(row) for row in accepted}
assert all(bytes((1 - row).astype(np.int8)) in as_set for row in accepted)
print("acceptance set is closed under treatment/control swap")

# Rejection sampling draws uniformly from that set without enumerating it.
stream = root.derive(1)
counts = {}
for _ in range(20_000):
    w, tries = draw_accepted_allocation(stream, X, crit, default_max_tries(0.2))
    assert mahalanobis(X, w, crit) <= crit.threshold
    counts[bytes(w)] = counts.get(bytes(w), 0) + 1

freq = np.array(sorted(counts.values()))
print(f"distinct allocations seen: {len(counts)} (set size {accepted.shape[0]})")
print(f"draw frequencies min/max: {freq.min()} / {freq.max()} "
      f"(uniform target {20_000 / accepted.shape[0]:.0f})")

# Accepted allocations have far better covariate balance than raw ones.
gen = root.derive(2).generator
raw_norms = []
for _ in range(2000):
    w = np.zeros(n, dtype=np.int8)
    w[gen.choice(n, n // 2, replace=False)] = 1
    raw_norms.append(np.linalg.norm(covariate_mean_difference(X, w)))
acc_norms = [np.linalg.norm(covariate_mean_difference(X, row)) for row in accepted]
print(f"mean |covariate mean difference|: raw {np.mean(raw_norms):.3f} "
      f"vs accepted {np.mean(acc_norms):.3f}")
