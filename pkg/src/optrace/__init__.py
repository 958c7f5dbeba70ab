"""Randomized trace estimation for trace-class integral operators with
Gaussian-process probe functions.
"""

__version__ = "0.1.0"

from .dos import (
    DosResult,
    RationalKernel,
    dense_smoothed_dos,
    dos_estimate,
    dos_reference_free_particle,
    rational_kernel,
)
from .estimators import (
    ParameterPlan,
    TraceEstimate,
    cont_hutch_pp,
    expected_estimate_oracle,
    gamma_k,
    hutchinson,
    hutchinson_m_bound,
    hutchpp_parameters,
    range_finder,
)
from .gp import ProbeSampler, SECovariance, covariance_matrix, kernel_op_norm
from .grids import (
    Grid1D,
    Grid2D,
    GridFunction,
    Quasimatrix,
    gram,
    inner_product,
    project_complement,
    qr,
)
from .operators import (
    KernelIntegralOperator,
    LinearOperator,
    RationalFilteredResolvent,
    SchrodingerOperator,
    builtin_kernel,
)
from .photonics import (
    CrossSection,
    FieldIntensityOperator,
    HelmholtzPML2D,
    mean_field_intensity,
    smoothed_indicator,
    spectrum_report,
)

__all__ = [
    "__version__",
    "Grid1D", "Grid2D", "GridFunction", "Quasimatrix",
    "inner_product", "gram", "qr", "project_complement",
    "SECovariance", "ProbeSampler", "covariance_matrix", "kernel_op_norm",
    "LinearOperator", "KernelIntegralOperator", "builtin_kernel",
    "SchrodingerOperator", "RationalFilteredResolvent",
    "TraceEstimate", "ParameterPlan", "hutchinson", "cont_hutch_pp",
    "range_finder", "expected_estimate_oracle", "hutchinson_m_bound",
    "hutchpp_parameters", "gamma_k",
    "RationalKernel", "rational_kernel", "DosResult", "dos_estimate",
    "dos_reference_free_particle", "dense_smoothed_dos",
    "CrossSection", "smoothed_indicator", "HelmholtzPML2D",
    "FieldIntensityOperator", "mean_field_intensity", "spectrum_report",
]
