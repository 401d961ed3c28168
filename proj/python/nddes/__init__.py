"""Neural solvers for forward and inverse delay differential equation problems."""

from nddes._core import (
    NddeError,
    Problem,
    ReferenceSolution,
    TrainResult,
    eval_checkpoint,
    get_problem,
    load_problem_json,
    registry_names,
    relative_l2_error,
    series_solution,
    solve_dde,
    train_forward,
    train_inverse,
    uniform_grid,
)

__all__ = [
    "NddeError",
    "Problem",
    "ReferenceSolution",
    "TrainResult",
    "eval_checkpoint",
    "get_problem",
    "load_problem_json",
    "registry_names",
    "relative_l2_error",
    "series_solution",
    "solve_dde",
    "train_forward",
    "train_inverse",
    "uniform_grid",
]
