"""Robust predict-then-optimize with conformal constraint sets."""

from sporc.core import ContextSample, Dataset, SplitSpec, four_way_split, read_dataset, write_dataset
from sporc.solver import BallUncertainty, RobustProblem, Solution, Status, solve_robust, solve_singleton

__all__ = [
    "BallUncertainty",
    "ContextSample",
    "Dataset",
    "RobustProblem",
    "Solution",
    "SplitSpec",
    "Status",
    "four_way_split",
    "read_dataset",
    "solve_robust",
    "solve_singleton",
    "write_dataset",
]

__version__ = "0.1.0"
