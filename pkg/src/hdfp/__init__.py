"""Penalized generalized functional linear models: estimation, testing, simulation."""

from .bspline import (
    BSplineBasis,
    GridFunction,
    basis_matrix,
    build_basis,
    eval_basis,
    gram_matrix,
    integrate_against,
    project_function,
    synthesize,
)
from .cprsm import CprsmConfig, FitResult, fit, gamma_update, project_feasible, theta_update
from .errors import ConfigError, HdfpError, NumericalError
from .glm import (
    GAUSSIAN,
    LOGISTIC,
    DesignMatrix,
    Family,
    FunctionalDataset,
    ThetaVector,
    build_design,
    get_family,
    gradient,
    hessian,
    loss,
)
from .inference import (
    Hypothesis,
    SandwichCovariance,
    TestResult,
    assemble_sandwich,
    chi2_cdf,
    chi2_quantile,
    ci_alpha,
    ci_beta_pointwise,
    normal_quantile,
    wald_test,
)
from .penalty import ScadPenalty, group_prox
from .tuning import CvPlan, cv_select, kfold_split

__version__ = "0.1.0"
