"""Fixed-effects panel quantile regression with random-weighted bootstrap inference."""

from ._version import __version__
from ._backend import DEFAULT as DEFAULT_BACKEND
from ._backend import available as available_backends
from .bootstrap import (
    ALL_ONES,
    EXPONENTIAL,
    LOGNORMAL,
    BootstrapResult,
    CIMethod,
    ConfidenceInterval,
    CovarianceEstimate,
    CovarianceSource,
    WeightKind,
    WeightScheme,
    bootstrap_covariance,
    draw_weights,
    percentile_ci,
    run_bootstrap,
    se_ci,
    t_ref_ci,
    wald_test,
)
from .errors import *  # noqa: F401,F403
from .io import PanelCsvSpec, Transform, load_panel, turning_point, is_ekc_shape
from .kernel_cov import (
    SandwichComponents,
    VMode,
    at_ci,
    estimate_components,
    hall_sheather_bandwidth,
    kernel_se,
    residual_bandwidth,
    sandwich,
)
from .panel import (
    PanelDataset,
    QuantileFit,
    SolverDiagnostics,
    SubgradientReport,
    check_loss,
    evaluate_objective,
    fit_feqr,
    fit_weighted_feqr,
    score,
    verify_subgradient,
)
from .simlab import (
    CoverageReport,
    ErrorKind,
    Family,
    GeneratedPanel,
    SimulationDesign,
    generate_dynamic,
    generate_static,
    run_coverage_study,
    true_beta,
)
