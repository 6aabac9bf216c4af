"""Risk-sensitive eigenvalue computation for controlled diffusions.

Solves the principal-eigenvalue form of the ergodic risk-sensitive control
problem on growing Dirichlet domains, extracts minimizing selectors, builds
the ground-state (twisted) diffusion, and verifies the resulting ergodicity
claims by Monte Carlo.
"""

from .continuation import SweepResult, SweepRow, estimate_lambda_star, sweep
from .discretize import (
    Grid,
    OperatorMatrix,
    Policy,
    assemble,
    assemble_fields,
    diffusion_apply,
    drift_cost_apply,
    make_grid,
)
from .eigensolve import EigenPair, HjbSolution, hjb_residual, principal_eigenpair, solve_hjb_dirichlet
from .errors import (
    CatalogError,
    ConvergenceError,
    EstimatorUndefinedError,
    InvalidModelError,
    InvariantError,
    MonotonicityError,
    ResourceError,
    RiskeigError,
    UnreliableEstimateError,
)
from .groundstate import (
    CertificateReport,
    GroundState,
    IdentityReport,
    classify,
    ergodic_identity,
    ergodicity_certificate,
    field_gradient,
    ground_state,
    log_transform,
    twisted_drift,
    write_field_csv,
)
from .model import (
    CoefficientBoundsReport,
    Model,
    NearMonotoneReport,
    builtin,
    check_coefficient_bounds,
    check_near_monotone,
    model_from_config,
)
from .montecarlo import (
    Bump,
    ExitMomentReport,
    FkEstimate,
    GammaIntegralReport,
    MixingReport,
    PathBatch,
    ProbeReport,
    SimConfig,
    autocorrelation_decay,
    exit_exponential_moment,
    exit_representation_check,
    fk_lambda,
    gamma_integral,
    interp_field,
    mixing_diagnostic,
    monotonicity_probe,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "Bump",
    "CatalogError",
    "CertificateReport",
    "CoefficientBoundsReport",
    "ConvergenceError",
    "EigenPair",
    "EstimatorUndefinedError",
    "ExitMomentReport",
    "FkEstimate",
    "GammaIntegralReport",
    "Grid",
    "GroundState",
    "HjbSolution",
    "IdentityReport",
    "InvalidModelError",
    "InvariantError",
    "MixingReport",
    "Model",
    "MonotonicityError",
    "NearMonotoneReport",
    "OperatorMatrix",
    "PathBatch",
    "Policy",
    "ProbeReport",
    "ResourceError",
    "RiskeigError",
    "SimConfig",
    "SweepResult",
    "SweepRow",
    "UnreliableEstimateError",
    "assemble",
    "assemble_fields",
    "autocorrelation_decay",
    "builtin",
    "check_coefficient_bounds",
    "check_near_monotone",
    "classify",
    "diffusion_apply",
    "drift_cost_apply",
    "ergodic_identity",
    "ergodicity_certificate",
    "estimate_lambda_star",
    "exit_exponential_moment",
    "exit_representation_check",
    "field_gradient",
    "fk_lambda",
    "gamma_integral",
    "ground_state",
    "hjb_residual",
    "interp_field",
    "log_transform",
    "make_grid",
    "mixing_diagnostic",
    "model_from_config",
    "monotonicity_probe",
    "principal_eigenpair",
    "simulate",
    "solve_hjb_dirichlet",
    "sweep",
    "twisted_drift",
    "write_field_csv",
]
