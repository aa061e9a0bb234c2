"""Uniform time grids and reproducible Brownian path ensembles.

Each path draws from its own Philox counter stream: the key is the seed and
the high counter word is the path index, so draw ``(m, i, k)`` is a pure
function of ``(seed, m, i, k)`` and the ensemble does not depend on how the
paths are split across workers.
"""
from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .exceptions import InvalidGrid

__all__ = [
    "TimeGrid",
    "PathEnsemble",
    "build_grid",
    "simulate_brownian",
    "save_ensemble",
    "load_ensemble",
    "worker_count",
]

WORKERS_ENV = "MRBSDE_WORKERS"
_MAGIC = b"MRBSDE01"
_HEADER = struct.Struct("<8sQQQQd")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        # i*T/N rather than i*dt keeps t_N == T exactly
        return np.arange(self.N + 1) * self.T / self.N

    def index_of(self, t: float) -> int:
        """Nearest grid index to ``t``."""
        return int(round(t / self.dt))


def build_grid(T: float, N: int) -> TimeGrid:
    if not (T > 0):
        raise InvalidGrid(f"T must be positive, got {T}")
    if int(N) != N or N < 1:
        raise InvalidGrid(f"N must be a positive integer, got {N}")
    return TimeGrid(float(T), int(N))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Brownian paths on a grid.

    ``states`` has shape ``(M, N+1, d)`` with ``states[:, 0] == 0`` and
    ``increments == diff(states)`` exactly.
    """

    grid: TimeGrid
    increments: np.ndarray
    states: np.ndarray
    seed: int

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def state(self, i: int) -> np.ndarray:
        """Scalar state at node ``i`` as a contiguous ``(M,)`` array (first dimension)."""
        return np.ascontiguousarray(self.states[:, i, 0])

    def increment(self, i: int) -> np.ndarray:
        return np.ascontiguousarray(self.increments[:, i, 0])

    def subset(self, paths) -> "PathEnsemble":
        """Sub-ensemble selected by a slice or index array (e.g. path parity)."""
        return PathEnsemble(
            self.grid,
            np.ascontiguousarray(self.increments[paths]),
            np.ascontiguousarray(self.states[paths]),
            self.seed,
        )


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _gaussian_block(seed: int, start: int, stop: int, n_draws: int) -> np.ndarray:
    out = np.empty((stop - start, n_draws))
    for row, m in enumerate(range(start, stop)):
        bitgen = np.random.Philox(key=seed, counter=[0, 0, 0, m])
        raw = bitgen.random_raw(n_draws)
        # 53-bit uniforms on the open interval (0, 1)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
        out[row] = ndtri(u)
    return out


def _from_draws(grid: TimeGrid, draws: np.ndarray, seed: int) -> PathEnsemble:
    M, N, d = draws.shape
    states = np.zeros((M, N + 1, d))
    np.cumsum(draws, axis=1, out=states[:, 1:, :])
    increments = np.diff(states, axis=1)
    return PathEnsemble(grid, increments, states, int(seed))


def simulate_brownian(grid: TimeGrid, M: int, d: int = 1, seed: int = 0, workers: int | None = None) -> PathEnsemble:
    """Simulate ``M`` paths of a ``d``-dimensional Brownian motion on ``grid``.

    ``workers`` defaults to the ``MRBSDE_WORKERS`` environment variable; the
    result is bit-identical for every worker count.
    """
    if M < 1 or d < 1:
        raise ValueError("M and d must be at least 1")
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    n_draws = grid.N * d
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers == 1 or M < 2 * workers:
        z = _gaussian_block(seed, 0, M, n_draws)
    else:
        bounds = np.linspace(0, M, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(
                lambda ab: _gaussian_block(seed, ab[0], ab[1], n_draws),
                zip(bounds[:-1], bounds[1:]),
            ))
        z = np.concatenate(blocks, axis=0)
    draws = z.reshape(M, grid.N, d) * np.sqrt(grid.dt)
    return _from_draws(grid, draws, seed)


def save_ensemble(ensemble: PathEnsemble, path) -> None:
    """Binary dump: header (magic, M, N, d, seed, T) then little-endian float64 increments."""
    header = _HEADER.pack(_MAGIC, ensemble.M, ensemble.grid.N, ensemble.d, ensemble.seed, ensemble.grid.T)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.increments, dtype="<f8").tobytes())


def load_ensemble(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        magic, M, N, d, seed, T = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an ensemble dump")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if payload.size != M * N * d:
        raise ValueError(f"{path}: truncated payload")
    draws = payload.astype(np.float64).reshape(M, N, d)
    return _from_draws(build_grid(T, N), draws, seed)
