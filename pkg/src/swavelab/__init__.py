"""Desk-scale numerical laboratory for a stochastic wave equation: weighted
energy audits, Monte Carlo path ensembles, and boundary-data inversion."""

__version__ = "0.1.0"

from .carleman import (AuditReport, CarlemanParams, WeightEvaluation,
                       audit_proof_coefficients, verify_condition_d,
                       verify_condition_params, weight_eval)
from .fields import (PrincipalField, SpatialProfile, TimeSpaceField,
                     WeightFunction, bump_profile, constant_field,
                     principal_constant, principal_identity, principal_sine_1d,
                     shifted_quadratic_weight, sine_mode_profile, zero_field,
                     zero_profile)
from .geometry import (BoundarySubset, EllipticityReport, SpatialMesh,
                       build_interval_mesh, build_mesh, build_rectangle_mesh,
                       check_ellipticity, extract_gamma0)
from .identity_lab import (IdentityReport, ManufacturedProcess, RatioStudy,
                           StabilityStudy, carleman_ratio,
                           deterministic_process, identity_refinement_study,
                           stability_ratio, stochastic_process,
                           verify_pointwise_identity)
from .inverse import (CounterexampleResult, ObservationRecord,
                      ReconstructionResult, UniquenessReport,
                      counterexample_forward_check, deterministic_counterexample,
                      forward_observation_map, reconstruct, uniqueness_probe)
from .spde import (CoefficientSet, HiddenRegularityResult, IsometryReport,
                   PathEnsemble, SeparableForce, TabulatedForce, compute_A_norm,
                   ensemble_summary, energy_series, hidden_regularity_ratio,
                   ito_isometry_check, simulate_forward, solve_deterministic,
                   solve_deterministic_reversed)

__all__ = [name for name in dir() if not name.startswith("_")]
