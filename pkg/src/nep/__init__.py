"""Fully-distributed Nash equilibrium seeking via a preconditioned proximal-point method."""

from .game import (
    BoxSet,
    CallableGame,
    GameError,
    NotStronglyMonotoneError,
    OracleError,
    QuadraticGame,
    game_constants,
    lift,
    solve_ne,
)
from .network import (
    Graph,
    KronOperator,
    MixingMatrix,
    NetworkError,
    Topology,
    degree_variant,
    erdos_renyi,
    metropolis_weights,
    preconditioner,
    spectral_gap,
)
from .solvers import (
    DivergenceError,
    InnerSolveError,
    RunResult,
    RunTrace,
    SolverConfig,
    SolverError,
    augmented_gradient_run,
    local_prox_step,
    pppa_consensus_update,
    pppa_run,
)
from .tuning import TuningError, TuningReport, compute_alpha_max, compute_rho, theoretical_rates, tune

__version__ = "0.1.0"
