"""Estimator-style front end to the reflected BSDE solvers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .problem import ProblemSpec, validate_problem
from .simulation import PathEnsemble, build_grid, simulate_brownian
from .solver import (
    SolverConfig,
    global_solve,
    k_determinism_check,
    simple_reflected_solve,
)

__all__ = ["MeanReflectedBSDE", "check_ensemble"]

_METHODS = ("auto", "simple", "global")


def check_ensemble(X, problem: ProblemSpec) -> PathEnsemble:
    """Validate that ``X`` is a path ensemble on ``[0, problem.T]``."""
    if not isinstance(X, PathEnsemble):
        raise TypeError(f"expected a PathEnsemble, got {type(X).__name__}")
    if not np.isclose(X.grid.T, problem.T, rtol=1e-12, atol=0):
        raise ValueError(f"ensemble horizon {X.grid.T} != problem horizon {problem.T}")
    if X.M < 2:
        raise ValueError("at least two paths are required")
    return X


class MeanReflectedBSDE(BaseEstimator):
    """Deterministic flat solution of a BSDE with a constraint in expectation.

    ``fit`` solves the problem on a Brownian path ensemble, either passed
    in or simulated from ``n_steps``, ``n_paths`` and ``random_state``.

    Parameters
    ----------
    problem : ProblemSpec
    method : {"auto", "simple", "global"}, default="auto"
        ``simple`` is the two-step solve for drivers without ``alpha * y``;
        ``global`` stitches Picard windows; ``auto`` picks ``simple`` when
        it applies.
    check_determinism : bool, default=False
        Also run the split-ensemble ``K`` comparison (about twice the cost).

    The remaining parameters mirror :class:`~mrbsde.solver.SolverConfig`.

    Attributes
    ----------
    solution_ : ReflectedSolution
    times_, y_samples_, z_samples_, K_ : ndarray
    traces_ : list of IterationTrace
    diagnostics_ : dict
    accepted_ : bool
        Flatness and feasibility within ``tol_flat`` / ``tol_constraint``.
    """

    def __init__(self, problem=None, *, method="auto", n_steps=64, n_paths=100_000, random_state=0,
                 basis_degree=4, ridge=1e-8, picard_tol=1e-4, max_iters=50, tol_flat=1e-2,
                 tol_constraint=1e-2, tol_L=1e-8, mode="adaptive", h_init=None, h_min=None,
                 rho_max=0.9, windows=None, check_determinism=False):
        self.problem = problem
        self.method = method
        self.n_steps = n_steps
        self.n_paths = n_paths
        self.random_state = random_state
        self.basis_degree = basis_degree
        self.ridge = ridge
        self.picard_tol = picard_tol
        self.max_iters = max_iters
        self.tol_flat = tol_flat
        self.tol_constraint = tol_constraint
        self.tol_L = tol_L
        self.mode = mode
        self.h_init = h_init
        self.h_min = h_min
        self.rho_max = rho_max
        self.windows = windows
        self.check_determinism = check_determinism

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            basis_degree=self.basis_degree, ridge=self.ridge, picard_tol=self.picard_tol,
            max_iters=self.max_iters, tol_flat=self.tol_flat, tol_constraint=self.tol_constraint,
            tol_L=self.tol_L, mode=self.mode, h_init=self.h_init, h_min=self.h_min,
            rho_max=self.rho_max, windows=self.windows,
        )

    def _solver(self):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}, got {self.method!r}")
        method = self.method
        if method == "auto":
            simple_ok = (self.problem.driver.alpha == 0.0 and self.windows is None
                         and self.mode == "adaptive")
            method = "simple" if simple_ok else "global"
        return simple_reflected_solve if method == "simple" else global_solve

    def fit(self, X=None, y=None):
        """Solve on ensemble ``X`` (simulated when ``None``); ``y`` is ignored."""
        if not isinstance(self.problem, ProblemSpec):
            raise TypeError("problem must be a ProblemSpec")
        self.validation_ = validate_problem(self.problem)
        if X is None:
            grid = build_grid(self.problem.T, self.n_steps)
            X = simulate_brownian(grid, self.n_paths, self.problem.d, seed=self.random_state or 0)
        X = check_ensemble(X, self.problem)
        cfg = self.solver_config()
        solver = self._solver()
        out = solver(self.problem, X, cfg)
        sol, traces = out if isinstance(out, tuple) else (out, [])
        if self.check_determinism:
            report = k_determinism_check(self.problem, X, cfg, solver=solver)
            sol.diagnostics["k_determinism"] = report.normalized
            self.k_determinism_ = report
        self.solution_ = sol
        self.traces_ = traces
        self.times_ = sol.times
        self.y_samples_ = sol.y_samples
        self.z_samples_ = sol.z_samples
        self.K_ = sol.K.values
        self.diagnostics_ = sol.diagnostics
        self.accepted_ = bool(
            sol.diagnostics["flatness"] <= self.tol_flat
            and sol.diagnostics["constraint_margin"] >= -self.tol_constraint
        )
        return self

    def mean_y(self):
        check_is_fitted(self, "solution_")
        return self.solution_.mean_y()

    def predict(self, X=None):
        """Sample mean of ``Y`` at every grid node (``X`` is ignored)."""
        return self.mean_y()
