"""Solver and verification toolkit for linear-quadratic optimal control of
delayed backward stochastic differential equations.

The package solves the delayed Riccati-type matrix equations that arise in
the synthesis of the optimal feedback, simulates the coupled delayed and
time-advanced stochastic systems by regression Monte Carlo, assembles the
optimal control in both its feedback and adjoint representations, and checks
the structural identities relating them at desk scale.
"""

from .model import (
    AssumptionReport,
    ConditioningError,
    DerivedWeights,
    Grid,
    GridAlignmentError,
    GridFn,
    ModelError,
    ProblemSpec,
    TerminalCondition,
    TimeHorizon,
    build_grid,
    check_compatibility,
    validate_assumptions,
)
from .config import dump_spec_json, load_spec, spec_from_dict
from .riccati import (
    MatrixTrajectory,
    MonotoneReport,
    PicardDiagnostics,
    PicardDivergenceError,
    PreconditionError,
    SolverError,
    compute_gamma,
    convergence_study,
    iterate_sigma_scheme,
    solve_aode,
    solve_delayed_riccati_sigma,
    solve_L,
    solve_linear_delayed_matrix_ode,
    solve_P_i,
)

from .stochastic import (
    BrownianBundle,
    ConditionalEstimator,
    PathEnsemble,
    estimate_conditional,
    generate_brownian,
    simulate_asdde,
    solve_dabsde,
    solve_delayed_bsde,
    solve_hamiltonian,
    solve_linear_asde_explicit,
    verify_estimate_2_3,
)
from .synthesis import (
    ControlLaw,
    CostReport,
    build_feedback_law,
    build_openloop_from_adjoint,
    evaluate_cost,
    optimal_cost_formula,
    solve_S,
)

__version__ = "0.1.0"
