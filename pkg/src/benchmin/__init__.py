"""Shrink a benchmark to a cheap weighted subset of tests that ranks
variants exactly as the full benchmark does."""

from benchmin.kernels import BACKEND
from benchmin.matrix import (PerformanceMatrix, Ranking, RtsmInstance, Solution, cost_reduction,
                             full_ranking, kendall_tau, score, weighted_ranking)
from benchmin.meta import SolverConfig, divide_and_conquer, iterative_solve, minimize
from benchmin.oracle import FeasibilityOracle, solves, solves_in_context

__all__ = [
    "BACKEND", "FeasibilityOracle", "PerformanceMatrix", "Ranking", "RtsmInstance", "Solution",
    "SolverConfig", "cost_reduction", "divide_and_conquer", "full_ranking", "iterative_solve",
    "kendall_tau", "minimize", "score", "solves", "solves_in_context", "weighted_ranking",
]
