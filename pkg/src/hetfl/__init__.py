"""Heterogeneous two-facility location games on a segment.

Exact optimal solvers, the standard mechanisms with their 5-bit message
protocol, and audits for strategy-proofness and approximation ratios.
"""

from .core import (
    EPS,
    Agent,
    InputDomainError,
    Instance,
    Lottery,
    Objective,
    Placement,
    UsageError,
    expected_utility,
    facility_utility,
    max_utility,
    objective_value,
    total_utility,
)
from .mechanisms import CONSTANTS, MechanismId, MechanismOutput, run_mechanism
from .solvers import SolveResult, grid_solve, solve, solve_1d, solve_2d, solve_discrete

__version__ = "0.1.0"
