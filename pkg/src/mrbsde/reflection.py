"""Mean reflection: the minimal shift operator, the deterministic compensator
and the flatness / feasibility verifiers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .condexp import expectation
from .exceptions import BracketFailure

__all__ = [
    "ReflectionInput",
    "CompensatorPath",
    "compute_Lt",
    "compute_K",
    "node_loss_means",
    "flatness_integral",
    "constraint_margin",
]

BRACKET_LIMIT = 1e9


@dataclass(frozen=True, eq=False)
class ReflectionInput:
    """Samples of ``X`` at the nodes ``times``; ``samples[i, m]`` is path ``m`` at ``times[i]``."""

    times: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        if self.samples.shape[0] != len(self.times):
            raise ValueError("one sample row per grid node expected")

    @classmethod
    def from_grid(cls, grid, samples):
        return cls(grid.nodes, np.asarray(samples, dtype=float))


@dataclass(frozen=True, eq=False)
class CompensatorPath:
    """Deterministic nondecreasing ``K`` on ``times`` with ``K[0] == 0``.

    ``shifts[i]`` is the minimal shift at node ``i`` and ``terminal_sup``
    is the supremum of the shifts over the whole window.
    """

    times: np.ndarray
    values: np.ndarray
    terminal_sup: float
    shifts: np.ndarray

    @property
    def suffix_sup(self) -> np.ndarray:
        return self.terminal_sup - self.values


def compute_Lt(loss, t, x_samples, tol=1e-8) -> float:
    """Smallest ``x >= 0`` with ``mean(loss(t, x + X)) >= 0`` (within ``tol``)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    X = np.ascontiguousarray(x_samples, dtype=float)
    if loss.is_linear:
        return max(float(loss.threshold(t)) - expectation(X), 0.0)

    def mean_loss(x):
        return expectation(loss.value(t, x + X))

    if mean_loss(0.0) >= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while mean_loss(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > BRACKET_LIMIT:
            raise BracketFailure(f"no feasible shift below {BRACKET_LIMIT:g} at t={t:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mean_loss(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def compute_K(loss, inp: ReflectionInput, tol=1e-8) -> CompensatorPath:
    """``K_i = S_0 - S_i`` with ``S_i`` the suffix maximum of the node shifts."""
    shifts = np.array([
        compute_Lt(loss, float(t), inp.samples[i], tol) for i, t in enumerate(inp.times)
    ])
    suffix = np.maximum.accumulate(shifts[::-1])[::-1]
    return CompensatorPath(np.asarray(inp.times, dtype=float), suffix[0] - suffix, float(suffix[0]), shifts)


def node_loss_means(loss, y_samples, times) -> np.ndarray:
    return np.array([expectation(loss.value(float(t), y_samples[i])) for i, t in enumerate(times)])


def flatness_integral(loss, y_samples, K: CompensatorPath) -> float:
    """Left-point Stieltjes sum of the positive part of the mean loss against ``dK``."""
    means = node_loss_means(loss, y_samples, K.times)
    dK = np.diff(K.values)
    return float(np.sum(np.maximum(means[:-1], 0.0) * dK))


def constraint_margin(loss, y_samples, times) -> float:
    """Minimum over nodes of the sample mean of the loss; feasible when ``>= -tol``."""
    return float(np.min(node_loss_means(loss, y_samples, times)))
