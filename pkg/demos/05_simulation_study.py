"""A reduced-scale factorial study with ANOVA and main-effect reports.

Runs the full factor grid (two model strengths x two effect sizes x five
heterogeneity levels) at a small replication count, then prints the two
summary views: which factors drive the variation in interval length and
coverage, and how each method compares to the unadjusted baseline.
Scale the replication counts up (or use the CLI presets) to reproduce
study-sized cells.
"""

import time

from rerand import FactorGrid, RngStream, anova, run_grid
from rerand.harness import main_effects_coverage, main_effects_length

grid = FactorGrid(
    n=50,
    K=3,
    cov_dist="normal01",
    dgp="DGP1",
    datasets_per_cell=3,       # study scale: 20
    experiments_per_dataset=200,  # study scale: 2000
)

t0 = time.perf_counter()
results = run_grid(RngStream(20240501), grid, workers=2)
records = int(results.lengths.size)
print(f"{records} records in {time.perf_counter() - t0:.0f}s "
      f"({len(grid.methods)} methods, all on shared allocations)\n")

for metric in ("length", "coverage"):
    table = anova(results, metric)
    shares = ", ".join(f"{k} {v:.1f}%" for k, v in table.percentages.items())
    print(f"{metric} variation by source: {shares}")

print("\nmain effects, interval length as % of the baseline method:")
for method, value in main_effects_length(results).items():
    print(f"  {method:8s} {value:6.2f}")

print("\nmain effects, coverage in percentage points from nominal 95%:")
for method, value in main_effects_coverage(results).items():
    print(f"  {method:8s} {value:+6.2f}")

print(
    "\nExpected pattern, stable even at this scale: model strength"
    "\ndominates length variation while coverage variation is almost all"
    "\nexperiment-level noise; the adjusted methods are 15-25% shorter"
    "\nthan the baseline, and the baseline over-covers by ~3 points."
)
