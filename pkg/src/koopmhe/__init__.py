"""Data-enabled moving horizon estimation in a learned Koopman lifted space.

The toolkit learns a lifting map and scheduling map from trajectory data,
represents the lifted linear-parameter-varying surrogate implicitly through
Hankel matrices of one offline trajectory, and estimates states online by
solving a convex QP over a sliding window, reconstructing the original states
linearly from the lifted estimate.
"""

from . import errors
from .lifting import LiftingModel, TrainConfig, train
from .mhe import MheConfig, build_hankel_stack, make_baseline, run_estimation
from .plants import builtin_plants, excitation_signal, simulate
from .qpsolve import QpProblem, QpSolution, kkt_solve, solve_qp
from .surrogate import (
    ExactLpvSurrogate,
    IdentityLifting,
    check_rank_condition,
    implicit_consistency_residual,
    implicit_predict,
    lift_trajectory,
    make_exact_benchmark,
)
from .trajectory import (
    StackedWindow,
    Trajectory,
    hankel,
    is_persistently_exciting,
    kron_input,
    kron_input_cols,
    window,
)

__all__ = [
    "errors",
    "LiftingModel", "TrainConfig", "train",
    "MheConfig", "build_hankel_stack", "make_baseline", "run_estimation",
    "builtin_plants", "excitation_signal", "simulate",
    "QpProblem", "QpSolution", "kkt_solve", "solve_qp",
    "ExactLpvSurrogate", "IdentityLifting", "check_rank_condition",
    "implicit_consistency_residual", "implicit_predict", "lift_trajectory",
    "make_exact_benchmark",
    "StackedWindow", "Trajectory", "hankel", "is_persistently_exciting",
    "kron_input", "kron_input_cols", "window",
]

__version__ = "0.1.0"
