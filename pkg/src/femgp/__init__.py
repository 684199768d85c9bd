"""Finite element representations of Matérn-type Gaussian processes on boxes.

The package assembles sparse precision matrices for the weights of a
piecewise-linear FE approximation of the field solving
``(kappa^2 - Laplace)^{s/2} u = kappa^{s - D/2} W`` with Neumann boundary
conditions, quantifies the approximation error against the exact spectral
series, and uses the resulting priors for regression and classification.
"""
from .errors import (
    AssemblyError,
    CouplingError,
    ConditioningError,
    ConfigError,
    DomainError,
    FemGPError,
    InconclusiveError,
    InsufficientDataError,
    IterationError,
    ParameterError,
    RangeError,
    ResourceError,
    StepError,
    UnsupportedError,
)
from .fem import Grid1D, TensorGrid, design_matrix, lumped_mass, mass_1d, stiffness_1d, tensor_mass_stiffness
from .fields import (
    CoefficientMap,
    FEField,
    KLField,
    PrecisionOperator,
    assemble_precision,
    coupled_error_mc,
    covariance_equivalence_check,
    expected_l2_error,
    precision_for_grid,
    sample_fe_spectral,
    sample_true_kl,
    sample_weights,
)
from .inference import (
    ClassificationDataset,
    PosteriorWeights,
    RegressionDataset,
    classify_map,
    pcn_sampler,
    pcn_step,
    posterior_weights,
    regress_cf,
    regress_fe,
)
from .linalg import SparseCholesky
from .matern import BoxDomain, MaternParams, folded_cov, matern_cov, matern_matrix
from .scaling import ScalingRecommendation, check_condition, flip_h, recommend_h
from .spectral import (
    continuum_eigs_1d,
    fe_eigs_1d,
    spectral_error_report,
    tensor_eigs,
    verify_generalized_eig,
)

__version__ = "0.1.0"
