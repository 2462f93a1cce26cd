"""Desk-scale solver and verification suite for a grain-boundary
phase-field system with dynamic boundary conditions.

The time stepper advances two fields, an orientation order parameter and an
orientation angle, by solving two convex minimization problems per step;
the diagnostics module turns the structural guarantees of that construction
(energy dissipation, bound preservation, order comparison, a bounded
certificate field for the singular limit) into executable audits.
"""

from .energy import EnergyBreakdown, FieldPair, eval_free_energy, eval_phi_delta, eval_weighted_tv
from .errors import (
    ConfigError,
    ConvergenceError,
    InvalidInitialDataError,
    InvalidPairingError,
    InvalidParameterError,
    KwcError,
    OracleError,
    ShapeError,
    StepSizeError,
)
from .mesh import Mesh, MeshSpec, build_mesh
from .model import (
    FunctionSpec,
    ModelParams,
    eval_f_delta,
    eval_grad_f_delta,
    tau_star,
    validate_assumptions,
)
from .scheme import (
    SolverOptions,
    SolveStats,
    State,
    Trajectory,
    eta_step,
    interpolate_trajectory,
    run_scheme,
    theta_step,
)

__version__ = "0.1.0"
