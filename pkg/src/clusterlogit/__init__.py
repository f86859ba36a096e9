"""Cluster-robust inference for logit models.

Sandwich and cluster-jackknife variance estimators (exact and linearized),
wild cluster linearized bootstrap tests and intervals, and a Monte Carlo
harness for clustered binary data.
"""

from .bootstrap import (
    RADEMACHER,
    WEBB,
    BootstrapResult,
    ScoreContributions,
    WeightDistribution,
    boot_se,
    contributions,
    draw_weights,
    p_equal_tail,
    p_symmetric,
    run_bootstrap,
    transform_scores_restricted,
    transform_scores_unrestricted,
    wild_bootstrap,
)
from .crve import (
    TestResult,
    VarianceMatrix,
    cv1,
    cv1h,
    cv2l,
    cv3,
    cv3l,
    delete_one_linearized,
    t_stat,
    wald,
)
from .data import (
    CoefVector,
    Dataset,
    FixedEffectSpec,
    Restriction,
    build_dataset,
    cluster_size_profile,
    expand_fixed_effects,
)
from .errors import *  # noqa: F401,F403
from .estimator import (
    FitResult,
    LpmFitResult,
    detect_separation,
    fit_lpm,
    fit_mle,
    fit_restricted,
    solve_gram,
)
from .intervals import Interval, ci_studentized, ci_symmetric, t_quantile
from .links import LOGIT, PROBIT, LinkFamily, get_family
from .simulation import (
    DgpConfig,
    ExperimentResult,
    calibrate_intercept,
    cluster_sizes,
    run_placebo,
    run_rejection_experiment,
    simulate_dataset,
)

__version__ = "0.1.0"
