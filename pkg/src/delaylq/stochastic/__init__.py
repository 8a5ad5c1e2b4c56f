"""Monte Carlo machinery: Brownian drivers, regression conditional
expectations, and Picard solvers for the delayed/advanced stochastic systems."""

from .brownian import BrownianBundle, generate_brownian
from .ensembles import PathEnsemble
from .regression import ConditionalEstimator, Projector, RegressionError, estimate_conditional
from .asdde import ExplicitAsdeResult, simulate_asdde, solve_linear_asde_explicit
from .bsde import node_projectors, solve_delayed_bsde, verify_estimate_2_3
from .dabsde import DabsdeResult, HamiltonianResult, NodeMatrices, solve_dabsde, solve_hamiltonian

__all__ = [
    "BrownianBundle",
    "generate_brownian",
    "PathEnsemble",
    "ConditionalEstimator",
    "Projector",
    "RegressionError",
    "estimate_conditional",
    "ExplicitAsdeResult",
    "simulate_asdde",
    "solve_linear_asde_explicit",
    "node_projectors",
    "solve_delayed_bsde",
    "verify_estimate_2_3",
    "DabsdeResult",
    "HamiltonianResult",
    "NodeMatrices",
    "solve_dabsde",
    "solve_hamiltonian",
]
