"""
Partially specified spatial autoregressive models with a single-hidden-layer
neural network component (PSAR-ANN), fitted by maximum likelihood.
"""

from .fitting import Bounds, FitError, FitOptions, FitResult, default_bounds, fit, fit_alternating, fit_joint
from .inference import (
    CovarianceEstimate,
    LRTResult,
    MoranResult,
    aic,
    asymptotic_covariance,
    confidence_intervals,
    lrt,
    morans_i,
)
from .lbfgsb import OptimizeResult, maximize_box_constrained, minimize_lbfgsb
from .likelihood import (
    Density,
    Likelihood,
    RhoOutOfBoundsError,
    UnsupportedFamilyError,
    density_eval,
    hessian_matrix,
    log_det_term,
    log_likelihood,
    score_vector,
)
from .model import (
    Dataset,
    ModelSpec,
    ParameterVector,
    canonicalize,
    logistic,
    nn_component,
    residuals,
)
from .simulation import McSummary, SimConfig, generate_dataset, monte_carlo, qq_data, sample_errors, lattice_design
from .weights import (
    IsolatedUnitError,
    WeightMatrix,
    build_knn,
    build_lattice_adjacency,
    build_minimum_distance,
    build_sphere_of_influence,
    read_gal,
    row_standardize,
    spectrum_and_bounds,
    symmetrize,
    write_gal,
)

__version__ = "0.1.0"
