"""Linear errors-in-variables regression with unknown heteroscedastic
measurement error, estimated from replicate surrogates.

Estimators: moment-corrected least squares, a weighted phase-function
criterion, and their combination through a generalized method of moments with
bootstrap-estimated equation covariance and sandwich standard errors. A
simulation harness reproduces the reference numerical studies at desk scale.
"""

from .covariance import CovarianceSet, estimate_covariances, estimate_sigma_j, estimate_sigma_x
from .errors import (
    BootstrapInstabilityError,
    CsvParseError,
    DegenerateCovarianceError,
    DegenerateInputError,
    EivError,
    EstimationError,
    PhaseValueError,
    StandardErrorError,
    ValidationError,
    WeightSolveError,
)
from .gmm import (
    GmmFit,
    StackedGradient,
    bootstrap_omega,
    fit_gmm,
    fit_gmm_multi,
    gmm_standard_errors,
    stacked_gradient,
)
from .metrics import RobustMse, SeSummary, mc_se_summary, robust_mse
from .model_data import (
    AveragedDesign,
    CsvSchema,
    Dataset,
    ParamVector,
    RegressionDesign,
    average_replicates,
    build_design,
    load_csv,
    make_dataset,
    write_csv,
)
from .moment_correction import McFit, corrected_l2, fit_mc, fit_ols
from .phase import EcfOutcome, PhaseConfig, build_ecf, dtilde, grad_dtilde, select_t_star, wepf
from .simgen import SimConfig, draw_errors, gen_dataset, gen_error_matrices, gen_half_normal_copula
from .study import StudyResult, run_replication, run_study
from .weights import WeightVector, make_weights, weights_equal, weights_minimax, weights_ql

__version__ = "0.1.0"
