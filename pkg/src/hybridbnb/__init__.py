"""Branch and bound for optimal control of hybrid systems with Bellman-like bounds."""

from .abstraction import (
    build_abstraction,
    check_alternating_simulation,
    graph_lyapunov,
    graph_value_iteration,
    mpc2_value_functions,
    transfer_value,
)
from .bnb import Incumbent, SolveReport, SolveStatus, enumeration_oracle, pop_heuristic, solve
from .geometry import Polyhedron, QpSolution, QpStatus, QuadProgram, qp_tolerance, solve_qp
from .model import (
    ConfigurationError,
    HybridSystem,
    QuadraticStageCost,
    SystemValidationError,
    TransitionRule,
    load_system,
    post,
    simulate,
    validate,
)
from .mpc import MpcConfig, UpperBoundResult, receding_horizon, upper_bound_beta
from .qfunction import (
    Cut,
    CutStore,
    backward_pass,
    exact_node_cost,
    generate_cut,
    node_lower_bound,
    value,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "Cut",
    "CutStore",
    "HybridSystem",
    "Incumbent",
    "MpcConfig",
    "Polyhedron",
    "QpSolution",
    "QpStatus",
    "QuadProgram",
    "QuadraticStageCost",
    "SolveReport",
    "SolveStatus",
    "SystemValidationError",
    "TransitionRule",
    "UpperBoundResult",
    "backward_pass",
    "build_abstraction",
    "check_alternating_simulation",
    "enumeration_oracle",
    "exact_node_cost",
    "generate_cut",
    "graph_lyapunov",
    "graph_value_iteration",
    "load_system",
    "mpc2_value_functions",
    "node_lower_bound",
    "pop_heuristic",
    "post",
    "qp_tolerance",
    "receding_horizon",
    "simulate",
    "solve",
    "solve_qp",
    "transfer_value",
    "upper_bound_beta",
    "validate",
    "value",
]
