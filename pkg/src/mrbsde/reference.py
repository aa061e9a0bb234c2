"""Closed-form reference solutions used as trusted oracles."""
from __future__ import annotations

import enum
import math
from typing import NamedTuple

import numpy as np

from .exceptions import InvalidFixture, OutOfRange
from .problem import ProblemSpec

__all__ = [
    "Example46",
    "example46_solution",
    "example46_mean",
    "example46_problem",
    "linear_loss_simple_oracle",
    "LinearOracle",
    "erf_series",
    "overlap_probability",
    "mean_comparison_fixture",
]


class Example46(enum.IntEnum):
    """Zero driver, constraint ``E[Y_t] >= 2T - t``, terminal ``|B_T|^2`` (ONE) or ``1.5 |B_T|^2`` (TWO)."""

    ONE = 1
    TWO = 2


def example46_solution(scenario, t, b, T):
    """Exact ``(Y_t, Z_t, K_t)`` at Brownian state ``b`` (scalars or arrays)."""
    scenario = Example46(scenario)
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > T):
        raise OutOfRange("t must lie in [0, T]")
    b = np.asarray(b, dtype=float) if np.ndim(b) else float(b)
    if scenario is Example46.ONE:
        return b * b + 2 * T - 2 * t, 2 * b, t
    Y = 1.5 * b * b + np.maximum(2 * T - 2.5 * t, 1.5 * T - 1.5 * t)
    return Y, 3 * b, np.minimum(t, T / 2)


def example46_mean(scenario, t, T):
    """``E[Y_t]`` under the exact Gaussian law (``E|B_t|^2 = t``)."""
    scenario = Example46(scenario)
    t = np.asarray(t, dtype=float)
    if scenario is Example46.ONE:
        return 2 * T - t
    return 1.5 * t + np.maximum(2 * T - 2.5 * t, 1.5 * T - 1.5 * t)


def example46_problem(scenario, T=1.0, L=1.0, lam=1.0) -> ProblemSpec:
    from .problem import Affine, AssumptionConstants, DriverSpec, LossSpec, TerminalSpec

    scale = 1.0 if Example46(scenario) is Example46.ONE else 1.5
    return ProblemSpec(
        terminal=TerminalSpec.squared_brownian(scale),
        driver=DriverSpec(),
        loss=LossSpec.linear(Affine(2 * T, -1.0)),
        T=T,
        constants=AssumptionConstants(L=L, lam=lam, C=1.0),
    )


class LinearOracle(NamedTuple):
    mean_y: np.ndarray
    K: np.ndarray
    terminal_sup: float


def linear_loss_simple_oracle(xi_mean, c, u, grid) -> LinearOracle:
    """Mean of ``Y`` and ``K`` for the driver ``f = c`` under a linear loss with level ``u``."""
    t = grid.nodes
    mean_x = xi_mean + c * (grid.T - t)
    level = np.array([u(s) for s in t]) if callable(u) else np.full_like(t, float(u))
    shifts = np.maximum(level - mean_x, 0.0)
    suffix = np.maximum.accumulate(shifts[::-1])[::-1]
    return LinearOracle(mean_x + suffix, suffix[0] - suffix, float(suffix[0]))


def erf_series(x: float, tol: float = 1e-13) -> float:
    """Maclaurin series of the error function.

    The series alternates with terms decreasing in magnitude once ``n > x^2``,
    so the first omitted term bounds the truncation error.
    """
    total, n = 0.0, 0
    power = x  # x^(2n+1) / n!
    while True:
        term = power / (2 * n + 1)
        total += -term if n % 2 else term
        n += 1
        power *= x * x / n
        if n > x * x and abs(power / (2 * n + 1)) * 2 / math.sqrt(math.pi) < tol:
            break
    return 2.0 / math.sqrt(math.pi) * total


def overlap_probability(t, T) -> float:
    """``P(|B_t|^2 < t) = 2 Phi(1) - 1`` for ``0 < t <= T/2``."""
    if not (0 < t <= T / 2):
        raise OutOfRange(f"t must lie in (0, T/2], got t={t}, T={T}")
    return erf_series(1.0 / math.sqrt(2.0))


def mean_comparison_fixture(base: ProblemSpec, c1: float, c2: float):
    """Pair of problems whose terminal values differ by the constants ``c1 >= c2``."""
    if c1 < c2:
        raise InvalidFixture(f"need c1 >= c2, got c1={c1}, c2={c2}")
    if base.loss.mean_lipschitz > 1.0 or base.constants.C > 1.0:
        raise InvalidFixture("mean comparison requires C <= 1")
    if base.driver.alpha != 0.0:
        raise InvalidFixture("mean comparison fixture needs a driver without alpha * y")
    return base.with_terminal(base.terminal.with_shift(c1)), base.with_terminal(base.terminal.with_shift(c2))
