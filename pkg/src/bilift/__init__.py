"""Multilevel interpolating functionals of bilinear Gaussian ensembles.

Estimators for the lifted interpolating functional, its Gibbs-type measures
and analytic parameter derivatives, a stationary-path solver, and the
independent oracles (closed forms, quadrature, naive enumeration) that verify
every identity.
"""

from .model import (
    Coefficients,
    EnsembleSpec,
    LiftingSchedule,
    ModelScalars,
    ProblemConfig,
    TiltSpec,
    ValidationReport,
    config_from_dict,
    derive_coefficients,
    load_config,
    save_config,
    validate,
)
from .nested import EstimateWithError, SamplePlan, estimate_psi, estimate_psi_S
from .measures import overlap_expectation, coupled
from .calculus import (
    IdentityReport,
    dpsi_dp,
    dpsi_dq,
    dpsi_dt,
    finite_difference,
    phi_p,
    phi_q,
    verify_identity,
)
from .stationary import (
    PathReport,
    SolverOptions,
    StationaryPoint,
    corollary_endpoint_check,
    modulo_m_bound,
    path_invariance,
    psi1,
    solve_stationary,
    stationarity_residuals,
)
from .oracles import naive_overlap, psi_beta0, psi_l1, quadrature_overlap, quadrature_psi
from .randomness import GaussianBlock, StreamKey, ibp_selfcheck, sample_G, sample_level

__version__ = "0.1.0"

__all__ = [
    "Coefficients",
    "EnsembleSpec",
    "EstimateWithError",
    "GaussianBlock",
    "IdentityReport",
    "LiftingSchedule",
    "ModelScalars",
    "PathReport",
    "ProblemConfig",
    "SamplePlan",
    "SolverOptions",
    "StationaryPoint",
    "StreamKey",
    "TiltSpec",
    "ValidationReport",
    "config_from_dict",
    "corollary_endpoint_check",
    "coupled",
    "derive_coefficients",
    "dpsi_dp",
    "dpsi_dq",
    "dpsi_dt",
    "estimate_psi",
    "estimate_psi_S",
    "finite_difference",
    "ibp_selfcheck",
    "load_config",
    "modulo_m_bound",
    "naive_overlap",
    "overlap_expectation",
    "path_invariance",
    "phi_p",
    "phi_q",
    "psi1",
    "psi_beta0",
    "psi_l1",
    "quadrature_overlap",
    "quadrature_psi",
    "sample_G",
    "sample_level",
    "save_config",
    "solve_stationary",
    "stationarity_residuals",
    "validate",
    "verify_identity",
]
