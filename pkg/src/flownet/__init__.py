"""Feedback-controlled dynamical flow networks: point-queue simulation and
verification.

The package solves ``dx/dt = lam - (I - R^T) z`` with state-dependent
outflow caps ``0 <= z <= zeta(x)`` and the complementarity condition
``x^T (zeta(x) - z) = 0`` through a reflection fixed point, and
cross-checks the result against an independent projected-Euler integrator.
"""

from .controllers import (
    AffineSupply,
    CompositeController,
    ConstantController,
    Controller,
    CtmController,
    CtmLinkSpec,
    GpaJunctionController,
    GpaPhaseSpec,
    LinearDemand,
    SaturatingDemand,
    compose,
    estimate_lipschitz,
    weighted_lipschitz,
)
from .errors import (
    CertificationError,
    FlownetError,
    NonConvergenceError,
    ScenarioFormatError,
    ScenarioValidationError,
    StructuralError,
)
from .network import (
    Multigraph,
    RoutingSpec,
    ValidityReport,
    WeightedNorm,
    build_weighted_norm,
    check_out_connected,
    equilibrium_outflow,
    validate_routing,
)
from .oracle import OracleConfig, OracleRun, closed_form_single_cell, oracle_solve, resolve_boundary_outflow
from .reflection import TimeGrid, TrajectoryGrid, apply_phi, apply_pi, fixed_point_psi, traj_norm
from .scenario_io import (
    bundled_scenario_path,
    list_bundled_scenarios,
    load_scenario,
    write_scenario,
)
from .solver import (
    InflowSignal,
    Scenario,
    Solution,
    SolveReport,
    apply_gamma,
    recover_outflow,
    solve,
    solve_window,
    window_length,
)
from .verification import InvariantCheck, check_solution

__version__ = "0.1.0"

__all__ = [
    "AffineSupply",
    "CertificationError",
    "CompositeController",
    "ConstantController",
    "Controller",
    "CtmController",
    "CtmLinkSpec",
    "FlownetError",
    "GpaJunctionController",
    "GpaPhaseSpec",
    "InflowSignal",
    "InvariantCheck",
    "LinearDemand",
    "Multigraph",
    "NonConvergenceError",
    "OracleConfig",
    "OracleRun",
    "RoutingSpec",
    "SaturatingDemand",
    "Scenario",
    "ScenarioFormatError",
    "ScenarioValidationError",
    "Solution",
    "SolveReport",
    "StructuralError",
    "TimeGrid",
    "TrajectoryGrid",
    "ValidityReport",
    "WeightedNorm",
    "apply_gamma",
    "apply_phi",
    "apply_pi",
    "build_weighted_norm",
    "bundled_scenario_path",
    "check_out_connected",
    "check_solution",
    "closed_form_single_cell",
    "compose",
    "equilibrium_outflow",
    "estimate_lipschitz",
    "fixed_point_psi",
    "list_bundled_scenarios",
    "load_scenario",
    "oracle_solve",
    "recover_outflow",
    "resolve_boundary_outflow",
    "solve",
    "solve_window",
    "traj_norm",
    "validate_routing",
    "weighted_lipschitz",
    "window_length",
    "write_scenario",
]
