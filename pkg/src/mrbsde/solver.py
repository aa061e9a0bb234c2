"""Regression Monte Carlo solver for quadratic BSDEs with mean reflection.

The building block is an explicit backward Euler pass for the standard
BSDE with the ``y`` argument of the driver frozen at a given process. The
reflected solution adds the deterministic compensator built from the
suffix supremum of the minimal shifts. A driver that depends on ``y`` is
handled by Picard iteration on short windows which are then stitched
together backward in time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .condexp import PolynomialCondExp, expectation
from .exceptions import (
    DivergenceDetected,
    InadmissibleTerminal,
    InvalidRadius,
    NoConvergence,
    RejectedSpec,
)
from .problem import AssumptionConstants, ProblemSpec, validate_problem
from .reflection import (
    CompensatorPath,
    ReflectionInput,
    compute_K,
    constraint_margin,
    flatness_integral,
)
from .simulation import PathEnsemble

__all__ = [
    "SolverConfig",
    "StandardSolution",
    "ReflectedSolution",
    "IterationTrace",
    "LocalSolveConstants",
    "GlobalBound",
    "KDeterminismReport",
    "solve_standard_bsde",
    "simple_reflected_solve",
    "picard_local_solve",
    "global_solve",
    "compute_local_constants",
    "compute_global_bound",
    "theoretical_window",
    "bmo_diagnostic",
    "malliavin_z_bound",
    "z_bound_exceedance",
    "k_determinism_check",
]

MODES = ("adaptive", "theoretical")


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs of the solver.

    ``h_init`` defaults to ``T/4`` and ``h_min`` to one grid step. When
    ``windows`` is set, ``[0, T]`` is split into that many equal windows
    (snapped to grid nodes) and the adaptive halving is disabled.
    """

    basis_degree: int = 4
    ridge: float = 1e-8
    picard_tol: float = 1e-4
    max_iters: int = 50
    tol_flat: float = 1e-2
    tol_constraint: float = 1e-2
    tol_L: float = 1e-8
    mode: str = "adaptive"
    h_init: Optional[float] = None
    h_min: Optional[float] = None
    rho_max: float = 0.9
    windows: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("picard_tol", "tol_flat", "tol_constraint", "tol_L", "rho_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.windows is not None and self.windows < 1:
            raise ValueError("windows must be at least 1")


@dataclass(eq=False)
class StandardSolution:
    times: np.ndarray
    y_samples: np.ndarray
    z_samples: np.ndarray
    residual_report: list


@dataclass(eq=False)
class ReflectedSolution:
    times: np.ndarray
    y_samples: np.ndarray
    z_samples: np.ndarray
    K: CompensatorPath
    diagnostics: dict = field(default_factory=dict)
    standard: Optional[StandardSolution] = None
    windows: list = field(default_factory=list)

    def mean_y(self) -> np.ndarray:
        return np.array([expectation(row) for row in self.y_samples])

    def stderr_y(self) -> np.ndarray:
        M = self.y_samples.shape[1]
        return np.array([np.std(row) / math.sqrt(M) for row in self.y_samples])


@dataclass
class IterationTrace:
    window: tuple
    deltas: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.deltas)

    @property
    def ratios(self) -> list:
        out = []
        for prev, cur in zip(self.deltas[:-1], self.deltas[1:]):
            out.append(cur / prev if prev > 0 else 0.0)
        return out

    def as_dict(self):
        return {
            "window": list(self.window),
            "iterations": self.iterations,
            "converged": self.converged,
            "deltas": list(self.deltas),
            "ratios": self.ratios,
        }


# ---------------------------------------------------------------------------
# explicit constants


@dataclass(frozen=True)
class LocalSolveConstants:
    A0: float
    delta_A: float
    hat_delta_A: float
    A: float


@dataclass(frozen=True)
class GlobalBound:
    Lbar1: float
    Lbar2: float
    Lbar: float


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def compute_local_constants(constants: AssumptionConstants, T: float, A: Optional[float] = None) -> LocalSolveConstants:
    """Ball radius ``A0`` and the window lengths ``delta^A``, ``hat delta^A``."""
    L, lam, C = constants.L, constants.lam, constants.C
    A0 = 2.0 * (C + 2.0) * L + 0.5 * C * (lam + 4.0 * L + 4.0 * L * lam) * _exp(6.0 * lam * L)
    if A is None:
        A = A0
    elif A < A0:
        raise InvalidRadius(f"radius {A} is below A0 = {A0}")
    if math.isinf(A):
        delta = 0.0
    else:
        delta = min(L / (L + lam * A + 0.5 * lam), T)
    hat = min(1.0 / (16.0 * lam * (lam * lam + 1.0) * (A + C + 1.0)), delta)
    return LocalSolveConstants(A0, delta, hat, A)


def compute_global_bound(constants: AssumptionConstants, T: float) -> GlobalBound:
    L, lam, C = constants.L, constants.lam, constants.C
    Lbar1 = L * (T + 1.0) * _exp(lam * T)
    Lbar2 = max(1.0, T) / 3.0 * (1.0 + 4.0 * L / lam + 2.0 * Lbar1) * _exp(3.0 * lam * Lbar1)
    Lbar = Lbar1 + (C + 1.0) * L + C * (L + 0.5 * lam) * T + 1.5 * C * Lbar2
    return GlobalBound(Lbar1, Lbar2, Lbar)


def theoretical_window(constants: AssumptionConstants, T: float) -> float:
    """Guaranteed-contraction window when every stitch terminal is bounded by ``Lbar``."""
    bound = compute_global_bound(constants, T)
    if not math.isfinite(bound.Lbar):
        return 0.0
    return compute_local_constants(replace(constants, L=bound.Lbar), T).hat_delta_A


# ---------------------------------------------------------------------------
# backward passes


def _divergence_limit(spec: ProblemSpec) -> float:
    k = spec.constants
    return 1e3 * (k.L + 1.0) * _exp(k.lam * spec.T)


def _backward_pass(ensemble: PathEnsemble, i0: int, i1: int, terminal, driver: Callable, cfg: SolverConfig, limit: float):
    """Explicit scheme on nodes ``i0..i1``; ``driver(k, t, z)`` returns the driver row at local step ``k``."""
    grid = ensemble.grid
    dt = grid.dt
    times = grid.nodes[i0:i1 + 1]
    n, M = i1 - i0, ensemble.M
    Y = np.empty((n + 1, M))
    Z = np.empty((n, M, 1))
    Y[n] = terminal
    report = []
    for k in range(n - 1, -1, -1):
        i = i0 + k
        state = ensemble.state(i)
        dB = ensemble.increment(i)
        est = PolynomialCondExp(cfg.basis_degree, cfg.ridge).fit(state, Y[k + 1])
        cond_mean = est.predict(state)
        resid = Y[k + 1] - cond_mean
        # the F_{t_i}-measurable conditional mean has zero covariance with dB;
        # subtracting it removes the O(1/dt) variance of the raw estimator
        z_est = PolynomialCondExp(cfg.basis_degree, cfg.ridge).fit(state, resid * dB / dt)
        Z[k, :, 0] = z_est.predict(state)
        Y[k] = cond_mean + dt * driver(k, float(times[k]), Z[k])
        report.append({
            "index": i,
            "residual_rms": float(np.sqrt(np.sum(resid * resid) / M)),
            "ridge": getattr(est, "ridge_", 0.0),
        })
        peak = float(np.max(np.abs(Y[k])))
        if not peak <= limit:
            raise DivergenceDetected(f"max |Y| = {peak:g} exceeds {limit:g} at t={times[k]:g}")
    report.reverse()
    return StandardSolution(times, Y, Z, report)


def _frozen_driver(spec: ProblemSpec, frozen_y):
    drv, z_cap = spec.driver, spec.z_cap

    def driver(k, t, z):
        y = 0.0 if frozen_y is None else frozen_y[k]
        return drv.evaluate(t, y, z, z_cap)

    return driver


def solve_standard_bsde(spec: ProblemSpec, frozen_y, ensemble: PathEnsemble, cfg: SolverConfig = SolverConfig(),
                        window=None, terminal=None) -> StandardSolution:
    """Standard BSDE with the driver's ``y`` argument frozen at ``frozen_y``.

    ``window`` is a pair of node indices (default the whole grid) and
    ``terminal`` the samples at its right end (default the terminal
    condition evaluated on ``B_T``). ``frozen_y=None`` evaluates the driver
    at ``y = 0``.
    """
    _check_ensemble(spec, ensemble)
    i0, i1 = (0, ensemble.grid.N) if window is None else window
    if terminal is None:
        terminal = spec.terminal.evaluate(ensemble.states[:, i1])
    return _backward_pass(ensemble, i0, i1, terminal, _frozen_driver(spec, frozen_y), cfg, _divergence_limit(spec))


def _check_ensemble(spec, ensemble):
    if not math.isclose(ensemble.grid.T, spec.T, rel_tol=1e-12):
        raise ValueError(f"ensemble horizon {ensemble.grid.T} does not match problem horizon {spec.T}")
    if ensemble.d != 1:
        raise RejectedSpec("only one-dimensional ensembles are supported")


def _check_admissible(loss, t, samples, cfg):
    # a terminal sitting on the constraint boundary is admissible; allow for sampling error
    values = loss.value(t, samples)
    margin = expectation(values)
    slack = max(cfg.tol_constraint, 3.0 * float(np.std(values)) / np.sqrt(values.size))
    if margin < -slack:
        raise InadmissibleTerminal(f"E[l({t:g}, terminal)] = {margin:.3g} < -{slack:.3g}")
    return margin


def _reflect(standard: StandardSolution, loss, cfg):
    K = compute_K(loss, ReflectionInput(standard.times, standard.y_samples), cfg.tol_L)
    remaining = K.values[-1] - K.values
    Y = standard.y_samples + remaining[:, None]
    return Y, K


def _diagnostics(spec, sol: ReflectedSolution, ensemble, cfg, i0=0):
    loss = spec.loss
    sol.diagnostics["flatness"] = flatness_integral(loss, sol.y_samples, sol.K)
    sol.diagnostics["constraint_margin"] = constraint_margin(loss, sol.y_samples, sol.times)
    sol.diagnostics.setdefault("k_determinism", math.nan)
    if sol.z_samples.shape[0] > 0:
        sol.diagnostics["bmo_estimate"] = bmo_diagnostic(sol.z_samples, ensemble, cfg, i0=i0)
    else:
        sol.diagnostics["bmo_estimate"] = 0.0
    return sol


def simple_reflected_solve(spec: ProblemSpec, ensemble: PathEnsemble, cfg: SolverConfig = SolverConfig()) -> ReflectedSolution:
    """Two-step solve for drivers whose ``y`` dependence is a deterministic ``a(t) y``.

    A nonzero ``a`` is removed by the exponential change of unknown
    ``Y^A = exp(A_t) Y`` with ``A_t`` the integral of ``a``; the result is
    mapped back, with ``K`` accumulated by a left-point Stieltjes sum.
    """
    validate_problem(spec)
    _check_ensemble(spec, ensemble)
    if spec.driver.alpha != 0.0:
        raise RejectedSpec("simple solve requires alpha = 0 (y may only enter through a(t))")
    grid = ensemble.grid
    xi = spec.terminal.evaluate(ensemble.states[:, grid.N])
    _check_admissible(spec.loss, spec.T, xi, cfg)
    a = spec.driver.a
    if a.is_zero:
        standard = solve_standard_bsde(spec, None, ensemble, cfg, terminal=xi)
        Y, K = _reflect(standard, spec.loss, cfg)
        sol = ReflectedSolution(standard.times, Y, standard.z_samples, K, standard=standard, windows=[(0, grid.N)])
        return _diagnostics(spec, sol, ensemble, cfg)

    times = grid.nodes
    growth = np.exp(a.integral(times))
    drv, z_cap = spec.driver, spec.z_cap

    def transformed_driver(k, t, z):
        e = growth[k]
        return e * drv.evaluate(t, 0.0, z / e, z_cap)

    loss_A = spec.loss.discounted(a)
    standard = _backward_pass(ensemble, 0, grid.N, growth[-1] * xi, transformed_driver, cfg,
                              _divergence_limit(spec) * growth.max())
    Y_A, K_A = _reflect(standard, loss_A, cfg)
    Y = Y_A / growth[:, None]
    Z = standard.z_samples / growth[:-1, None, None]
    K_vals = np.concatenate([[0.0], np.cumsum(np.diff(K_A.values) / growth[:-1])])
    shifts = K_A.shifts / growth
    K = CompensatorPath(times, K_vals, float(K_vals[-1] + K_A.suffix_sup[-1] / growth[-1]), shifts)
    untransformed = StandardSolution(times, standard.y_samples / growth[:, None], Z, standard.residual_report)
    sol = ReflectedSolution(times, Y, Z, K, standard=untransformed, windows=[(0, grid.N)])
    return _diagnostics(spec, sol, ensemble, cfg)


def picard_local_solve(spec: ProblemSpec, window, terminal_samples, ensemble: PathEnsemble,
                       cfg: SolverConfig = SolverConfig(), rho_abort: Optional[float] = None):
    """Picard iteration of the frozen-``y`` reflected map on the node window ``(i0, i1)``.

    Returns the last iterate and its :class:`IterationTrace`. Raises
    :class:`NoConvergence` (with the trace attached) when ``max_iters`` is
    exhausted, or as soon as a contraction ratio exceeds ``rho_abort``.
    """
    _check_ensemble(spec, ensemble)
    i0, i1 = window
    if not 0 <= i0 < i1 <= ensemble.grid.N:
        raise ValueError(f"invalid window {window}")
    times = ensemble.grid.nodes[i0:i1 + 1]
    terminal = np.asarray(terminal_samples, dtype=float)
    _check_admissible(spec.loss, float(times[-1]), terminal, cfg)
    limit = _divergence_limit(spec)
    trace = IterationTrace((float(times[0]), float(times[-1])))
    U = np.zeros((i1 - i0 + 1, ensemble.M))
    for _ in range(cfg.max_iters):
        standard = _backward_pass(ensemble, i0, i1, terminal, _frozen_driver(spec, U), cfg, limit)
        Y, K = _reflect(standard, spec.loss, cfg)
        delta = float(np.max(np.abs(Y - U)))
        trace.deltas.append(delta)
        U = Y
        if delta < cfg.picard_tol:
            trace.converged = True
            break
        if rho_abort is not None and trace.ratios and trace.ratios[-1] > rho_abort:
            raise NoConvergence(f"contraction ratio {trace.ratios[-1]:.3g} exceeds {rho_abort:g}", trace)
    if not trace.converged:
        raise NoConvergence(
            f"Picard iteration on [{times[0]:g}, {times[-1]:g}] stopped at delta={trace.deltas[-1]:.3g} "
            f"after {trace.iterations} iterations", trace)
    sol = ReflectedSolution(times, U, standard.z_samples, K, standard=standard, windows=[(i0, i1)])
    return _diagnostics(spec, sol, ensemble, cfg, i0=i0), trace


def _window_steps(spec, ensemble, cfg):
    grid = ensemble.grid
    if cfg.windows is not None:
        return None
    if cfg.mode == "theoretical":
        h = theoretical_window(spec.constants, spec.T)
        steps = int(math.floor(h / grid.dt * (1 + 1e-12)))
        if steps < 1:
            raise NoConvergence(
                f"theoretical window {h:.4g} is below the grid step {grid.dt:.4g}; "
                f"need N >= T/h = {spec.T / h if h > 0 else math.inf:.4g}")
        return steps
    h = spec.T / 4.0 if cfg.h_init is None else cfg.h_init
    return max(1, int(round(h / grid.dt)))


def global_solve(spec: ProblemSpec, ensemble: PathEnsemble, cfg: SolverConfig = SolverConfig()):
    """Solve on ``[0, T]`` by stitching local Picard solutions backward in time.

    Returns the stitched solution and the list of accepted window traces
    (latest window first).
    """
    validate_problem(spec)
    _check_ensemble(spec, ensemble)
    grid = ensemble.grid
    N = grid.N
    steps = _window_steps(spec, ensemble, cfg)
    h_min = grid.dt if cfg.h_min is None else cfg.h_min
    adaptive = cfg.windows is None and cfg.mode == "adaptive"
    fixed_bounds = None
    if cfg.windows is not None:
        fixed_bounds = np.unique(np.round(np.linspace(0, N, cfg.windows + 1)).astype(int))

    Y = np.empty((N + 1, ensemble.M))
    Z = np.empty((N, ensemble.M, 1))
    Y[N] = spec.terminal.evaluate(ensemble.states[:, N])
    pieces, traces = [], []
    end = N
    while end > 0:
        if fixed_bounds is not None:
            start = int(fixed_bounds[np.searchsorted(fixed_bounds, end) - 1])
        else:
            start = max(0, end - steps)
        try:
            local, trace = picard_local_solve(spec, (start, end), Y[end], ensemble, cfg,
                                              rho_abort=cfg.rho_max if adaptive else None)
            if adaptive and any(r > cfg.rho_max for r in trace.ratios):
                raise NoConvergence("contraction ratio above rho_max", trace)
        except (NoConvergence, DivergenceDetected) as exc:
            if not adaptive:
                raise
            steps //= 2
            if steps < 1 or steps * grid.dt < h_min * (1 - 1e-12):
                raise NoConvergence(f"window length fell below h_min={h_min:g}: {exc}", traces) from exc
            continue
        Y[start:end + 1] = local.y_samples
        Z[start:end] = local.z_samples
        pieces.append((start, end, local.K))
        traces.append(trace)
        end = start

    K_vals = np.zeros(N + 1)
    shifts = np.zeros(N + 1)
    offset = 0.0
    for start, end, K in reversed(pieces):
        K_vals[start:end + 1] = offset + K.values
        shifts[start:end + 1] = K.shifts
        offset = K_vals[end]
    last_K = pieces[0][2]
    K = CompensatorPath(grid.nodes, K_vals, float(K_vals[-1] + last_K.suffix_sup[-1]), shifts)
    sol = ReflectedSolution(grid.nodes, Y, Z, K, windows=[(s, e) for s, e, _ in reversed(pieces)])
    return _diagnostics(spec, sol, ensemble, cfg), traces


# ---------------------------------------------------------------------------
# diagnostics


def bmo_diagnostic(z_samples, ensemble: PathEnsemble, cfg: SolverConfig = SolverConfig(), i0: int = 0) -> float:
    """Grid lower estimate of the squared BMO norm of ``Z``.

    For each node the conditional expectation of the remaining
    ``sum |Z|^2 dt`` is regressed on the state; the maximum fitted value
    over nodes and paths is returned.
    """
    Z = np.asarray(z_samples, dtype=float)
    if Z.ndim == 2:
        Z = Z[:, :, None]
    n = Z.shape[0]
    dt = ensemble.grid.dt
    tail = np.zeros(Z.shape[1])
    best = 0.0
    for k in range(n - 1, -1, -1):
        tail = tail + np.sum(Z[k] * Z[k], axis=-1) * dt
        est = PolynomialCondExp(cfg.basis_degree, cfg.ridge).fit(ensemble.state(i0 + k), tail)
        best = max(best, float(np.max(est.predict(ensemble.state(i0 + k)))))
    return best


def _q_integral(q, t, T, lam):
    """``int_t^T q_s exp(lam (s - t)) ds`` for constant or piecewise-constant ``q``.

    A piecewise-constant ``q`` is a sequence of ``(start, value)`` pairs
    sorted by start; each value holds until the next start.
    """
    if np.isscalar(q):
        pieces = [(0.0, float(q))]
    else:
        pieces = [(float(a), float(v)) for a, v in q]
    total = 0.0
    for j, (a, v) in enumerate(pieces):
        b = pieces[j + 1][0] if j + 1 < len(pieces) else T
        lo, hi = max(a, t), min(b, T)
        if hi <= lo or v == 0.0:
            continue
        if lam == 0:
            total += v * (hi - lo)
        else:
            total += v * (math.exp(lam * (hi - t)) - math.exp(lam * (lo - t))) / lam
    return total


def malliavin_z_bound(L: float, lam: float, q, t: float, T: float, d: int = 1) -> float:
    """``sqrt(d) (L exp(lam (T - t)) + int_t^T q_s exp(lam (s - t)) ds)``."""
    if np.isscalar(q) and q < 0 or not np.isscalar(q) and any(v < 0 for _, v in q):
        raise ValueError("q must be nonnegative")
    return math.sqrt(d) * (L * math.exp(lam * (T - t)) + _q_integral(q, t, T, lam))


def z_bound_exceedance(z_samples, times, L, lam, q, T, d=1) -> float:
    """Fraction of ``(step, path)`` samples with ``|Z|`` above the bound."""
    Z = np.asarray(z_samples, dtype=float)
    norms = np.sqrt(np.sum(Z * Z, axis=-1)) if Z.ndim == 3 else np.abs(Z)
    bounds = np.array([malliavin_z_bound(L, lam, q, float(t), T, d) for t in times[:Z.shape[0]]])
    return float(np.mean(norms > bounds[:, None]))


@dataclass
class KDeterminismReport:
    """Split-ensemble comparison of ``K`` against its Monte Carlo standard error."""

    K_even: np.ndarray
    K_odd: np.ndarray
    stderr: np.ndarray
    n_batches: int

    @property
    def spread(self) -> np.ndarray:
        return np.abs(self.K_even - self.K_odd)

    @property
    def normalized(self) -> float:
        """Largest spread in units of the standard error (0 where both vanish)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.spread <= 1e-12, 0.0, self.spread / self.stderr)
        return float(np.max(r))

    def passed(self, factor=3.0) -> bool:
        return bool(np.all(self.spread <= factor * self.stderr + 1e-12))


def k_determinism_check(spec, ensemble: PathEnsemble, cfg: SolverConfig = SolverConfig(),
                        solver=None, n_batches: int = 16) -> KDeterminismReport:
    """Solve on the even and odd paths separately and compare the two ``K``.

    The standard error of the difference is estimated by batch means:
    ``K`` is re-solved on ``n_batches`` disjoint path batches (path index
    modulo ``n_batches``) and the batch spread is rescaled to two halves.
    """
    if solver is None:
        solver = _default_solver(spec)

    def solve_K(ens):
        out = solver(spec, ens, cfg)
        sol = out[0] if isinstance(out, tuple) else out
        return sol.K.values

    K_even = solve_K(ensemble.subset(slice(0, None, 2)))
    K_odd = solve_K(ensemble.subset(slice(1, None, 2)))
    batches = np.array([solve_K(ensemble.subset(slice(b, None, n_batches))) for b in range(n_batches)])
    sd_batch = np.std(batches, axis=0, ddof=1)
    # each half holds n_batches/2 batches; the difference of two halves has twice that variance
    stderr = sd_batch * math.sqrt(2.0 / (n_batches / 2.0))
    return KDeterminismReport(K_even, K_odd, stderr, n_batches)


def _default_solver(spec):
    if spec.driver.alpha == 0.0:
        return simple_reflected_solve
    return global_solve
