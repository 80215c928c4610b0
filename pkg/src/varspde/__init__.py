"""varspde: spectral Galerkin simulation and verification of variational
stochastic evolution equations du + Au dt = f dt + (Bu + g) dW."""

__version__ = "0.1.0"

from .triple import (  # noqa: F401
    H,
    V,
    VDUAL,
    SpaceTag,
    SpectralTriple,
    complex_interp,
    duality_pairing,
    gagliardo_kind,
    holder_kind,
    lp_norm_kind,
    norm,
    real_interp,
    sup_norm_kind,
    time_norm,
)
from .operators import (  # noqa: F401
    CoercivityError,
    CoercivityReport,
    OperatorPair,
    check_coercivity,
    check_symmetry,
    diagonal_pair,
    laplacian_pair,
    polarization_bound,
    random_symmetric_pair,
    riesz_pair,
    scalar_pair,
    scalar_triple,
)
from .noise import NoiseModel, uniform_grid  # noqa: F401
from .linear import (  # noqa: F401
    DivergenceError,
    LinearProblem,
    NumericsError,
    PathEnsemble,
    estimate_Cp,
    estimate_solution_map_norm,
    exponential_shift,
    reference_scaling_invariance,
    riesz_matrix,
    solve_deterministic_reference,
    solve_linear,
    solve_shifted,
    solve_with_B_fixed_point,
)
