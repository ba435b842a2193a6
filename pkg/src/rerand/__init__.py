"""Rerandomized experiments: balanced allocation and treatment-effect inference.

The package covers the full pipeline of a rerandomized trial study:

- ``streams``: reproducible, splittable random streams and the sampling
  primitives (truncated chi-square, Beta, inverse gamma, standard laws);
- ``design``: the Mahalanobis covariate-balance criterion, the
  accept/reject allocation sampler, and small-n exact enumeration;
- ``estimators``: mean-difference and OLS-adjusted point estimates with
  conservative or heteroskedasticity-robust 95% intervals;
- ``ldr``: intervals from the asymptotic mixture law of the mean
  difference under rerandomization;
- ``bayes``: Gibbs-sampled Bayesian models with perfect-correlation
  imputation of the missing potential outcomes;
- ``dgp``: simulation data generation and dataset files;
- ``harness``: the factorial Monte Carlo study with ANOVA and
  main-effect summaries;
- ``cli``: the ``rerand`` batch command.
"""

from .bayes import (
    PosteriorDraw,
    PriorSpec,
    TauPosterior,
    credible_interval,
    gibbs_sample,
    impute_tau,
    tau_posterior,
)
from .design import (
    BalanceCriterion,
    build_criterion,
    covariate_mean_difference,
    draw_accepted_allocation,
    enumerate_acceptance_set,
    finite_population_covariance,
    mahalanobis,
)
from .dgp import (
    DgpConfig,
    DgpConstants,
    PotentialOutcomes,
    build_constants,
    generate_covariates,
    generate_outcomes,
)
from .estimators import (
    IntervalEstimate,
    ObservedData,
    OlsFit,
    adjusted_interval,
    mean_difference,
    neyman_interval,
    ols_fit,
    robust_covariance,
)
from .harness import (
    METHODS,
    AnovaTable,
    FactorGrid,
    ResultRecord,
    ResultSet,
    anova,
    evaluate_methods,
    main_effects_coverage,
    main_effects_length,
    run_grid,
)
from .ldr import AsymptoticParams, QSampler, estimate_asymptotics, ldr_interval, q_quantile, sample_q
from .streams import (
    RngStream,
    TruncatedChiSqSpec,
    chisq_quantile,
    derive_stream,
    sample_beta_half,
    sample_inverse_gamma,
    sample_standard,
    sample_truncated_chisq,
)

__version__ = "0.1.0"
