"""Monte Carlo solvers for BSDEs reflected in mean."""
from .condexp import PolynomialCondExp, evaluate, expectation, fit_condexp
from .estimator import MeanReflectedBSDE
from .exceptions import *  # noqa: F401,F403
from .problem import (
    Affine,
    AssumptionConstants,
    DriverSpec,
    LossSpec,
    ProblemSpec,
    TerminalSpec,
    validate_problem,
)
from .reflection import ReflectionInput, compute_K, compute_Lt
from .simulation import PathEnsemble, TimeGrid, build_grid, simulate_brownian
from .solver import (
    SolverConfig,
    global_solve,
    picard_local_solve,
    simple_reflected_solve,
    solve_standard_bsde,
)

__version__ = "0.1.0"
