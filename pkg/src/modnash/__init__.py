"""Nash equilibria of modular multi-player games by asynchronous block-iterative splitting."""

from .engine import (
    BlockPolicy,
    DelayPolicy,
    InclusionSystem,
    Schedule,
    ScheduleRecord,
    Solution,
    SolverConfig,
    SolverState,
    iterate_once,
    make_schedule,
    reduce_to_inclusion,
    solve,
    solve_generic_inclusion,
    validate_config,
)
from .errors import (
    ConfigurationError,
    DegeneracyError,
    ModelValidityError,
    NashError,
    NumericalDivergenceError,
    NumericalError,
    OracleError,
    ParameterError,
    SchedulingError,
    StructuralError,
    UnboundednessError,
)
from .model import (
    ModularNashProblem,
    SmoothCoupling,
    build_affine_game,
    build_minimax_game,
    build_multivariate_minimization,
    build_quadratic_game,
    check_coupling_monotonicity,
    check_pairwise_weight_condition,
    estimate_chi,
)
from .oracle import (
    Certificate,
    best_response,
    certify,
    gradient_check,
    kkt_residual,
    nash_gap,
    quadratic_equilibrium_direct,
)
from .spaces import BlockLayout, BlockVector, LinearCoupling

__version__ = "0.1.0"

__all__ = [
    "BlockPolicy",
    "DelayPolicy",
    "InclusionSystem",
    "Schedule",
    "ScheduleRecord",
    "Solution",
    "SolverConfig",
    "SolverState",
    "iterate_once",
    "make_schedule",
    "reduce_to_inclusion",
    "solve",
    "solve_generic_inclusion",
    "validate_config",
    "ConfigurationError",
    "DegeneracyError",
    "ModelValidityError",
    "NashError",
    "NumericalDivergenceError",
    "NumericalError",
    "OracleError",
    "ParameterError",
    "SchedulingError",
    "StructuralError",
    "UnboundednessError",
    "ModularNashProblem",
    "SmoothCoupling",
    "build_affine_game",
    "build_minimax_game",
    "build_multivariate_minimization",
    "build_quadratic_game",
    "check_coupling_monotonicity",
    "check_pairwise_weight_condition",
    "estimate_chi",
    "Certificate",
    "best_response",
    "certify",
    "gradient_check",
    "kkt_residual",
    "nash_gap",
    "quadratic_equilibrium_direct",
    "BlockLayout",
    "BlockVector",
    "LinearCoupling",
    "bundled_game",
    "bundled_games",
]


def bundled_game(name: str) -> str:
    """Path of a problem file shipped with the package, e.g. ``bundled_game("quad2")``."""
    from importlib.resources import files

    path = files(__name__) / "games" / f"{name}.game"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled game named {name!r}")
    return str(path)


def bundled_games() -> list[str]:
    from importlib.resources import files

    return sorted(p.name[: -len(".game")] for p in (files(__name__) / "games").iterdir() if p.name.endswith(".game"))
