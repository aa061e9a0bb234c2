"""Problem instances: terminal condition, driver, loss and assumption constants.

Only a fixed catalog of drivers and losses is supported so that every
standing assumption can be checked analytically. To add a new driver or
loss kind, extend the corresponding dataclass with its parameters, its
``evaluate``/``value`` branch and its entry in :func:`validate_problem`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import RejectedSpec

__all__ = [
    "Affine",
    "AssumptionConstants",
    "TerminalSpec",
    "DriverSpec",
    "LossSpec",
    "DiscountedLoss",
    "ProblemSpec",
    "AssumptionCheck",
    "ValidationReport",
    "validate_problem",
    "eval_driver",
    "eval_loss",
]


@dataclass(frozen=True)
class Affine:
    """Deterministic function ``t -> intercept + slope * t``."""

    intercept: float = 0.0
    slope: float = 0.0

    def __call__(self, t):
        return self.intercept + self.slope * t

    def integral(self, t):
        """Exact antiderivative vanishing at 0."""
        return self.intercept * t + 0.5 * self.slope * t * t

    def sup_abs(self, T: float) -> float:
        return max(abs(self(0.0)), abs(self(T)))

    @property
    def is_zero(self) -> bool:
        return self.intercept == 0.0 and self.slope == 0.0


@dataclass(frozen=True)
class AssumptionConstants:
    """Constants of the standing assumptions.

    ``L`` bounds the terminal value, ``f(t, 0, 0)`` and ``|L_t(0)|``;
    ``lam`` is the Lipschitz / quadratic-growth constant of the driver;
    ``C`` is the mean-Lipschitz constant of the shift operator and
    ``c_loss <= C_loss`` are the bi-Lipschitz constants of the loss.
    """

    L: float
    lam: float
    C: float = 1.0
    c_loss: float = 1.0
    C_loss: float = 1.0


_TERMINAL_KINDS = ("clipped_polynomial", "squared_brownian", "constant")


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal condition as a function of the terminal Brownian state.

    ``shift`` is added after clipping, which is how constant terminal
    perturbations are expressed.
    """

    kind: str
    coefficients: tuple = (0.0, 1.0)
    clip_bound: float = 10.0
    scale: float = 1.0
    value: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in _TERMINAL_KINDS:
            raise RejectedSpec(f"unknown terminal kind {self.kind!r}")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @classmethod
    def clipped_polynomial(cls, coefficients, clip_bound=10.0, shift=0.0):
        return cls("clipped_polynomial", coefficients=tuple(coefficients), clip_bound=clip_bound, shift=shift)

    @classmethod
    def squared_brownian(cls, scale=1.0, shift=0.0):
        return cls("squared_brownian", scale=scale, shift=shift)

    @classmethod
    def constant(cls, value, shift=0.0):
        return cls("constant", value=value, shift=shift)

    def with_shift(self, c: float) -> "TerminalSpec":
        return TerminalSpec(self.kind, self.coefficients, self.clip_bound, self.scale, self.value, self.shift + c)

    @property
    def bound(self) -> float:
        if self.kind == "clipped_polynomial":
            return abs(self.clip_bound) + abs(self.shift)
        if self.kind == "constant":
            return abs(self.value + self.shift)
        return math.inf

    def evaluate(self, b_T):
        """Evaluate on terminal states; ``b_T`` has shape ``(M,)`` or ``(M, 1)``."""
        b = np.asarray(b_T, dtype=float)
        if b.ndim == 2:
            b = b[:, 0]
        if self.kind == "clipped_polynomial":
            # Horner, highest degree first
            out = np.zeros_like(b)
            for c in reversed(self.coefficients):
                out = out * b + c
            out = np.clip(out, -self.clip_bound, self.clip_bound)
        elif self.kind == "squared_brownian":
            out = self.scale * b * b
        else:
            out = np.full_like(b, self.value)
        return out + self.shift


@dataclass(frozen=True)
class DriverSpec:
    """``f(t, y, z) = a(t) y + alpha y + beta |z|_c + gamma |z|_c^2 + kappa``.

    ``|z|_c = min(|z|, z_cap)``. A ``z_cap`` of ``None`` defers to the
    problem default ``10 L exp(lam T)``.
    """

    a: Affine = field(default_factory=Affine)
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    kappa: float = 0.0
    z_cap: Optional[float] = None

    @property
    def y_free(self) -> bool:
        return self.alpha == 0.0 and self.a.is_zero

    def evaluate(self, t, y, z, z_cap=None):
        z_cap = self.z_cap if z_cap is None else z_cap
        if z_cap is None:
            z_cap = math.inf
        zc = np.minimum(_znorm(z), z_cap)
        return self.a(t) * y + self.alpha * y + self.beta * zc + self.gamma * zc * zc + self.kappa


def _znorm(z):
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        return np.abs(z)
    if z.shape[-1] == 1:
        return np.abs(z[..., 0])
    return np.sqrt(np.sum(z * z, axis=-1))


_LOSS_KINDS = ("linear", "piecewise_linear")


@dataclass(frozen=True)
class LossSpec:
    """Loss ``l(t, y) = phi(y - u(t))``.

    ``phi(r) = r`` for ``linear`` and ``a_pos r^+ - a_neg r^-`` for
    ``piecewise_linear``.
    """

    kind: str = "linear"
    level: Affine = field(default_factory=Affine)
    a_pos: float = 1.0
    a_neg: float = 1.0

    def __post_init__(self):
        if self.kind not in _LOSS_KINDS:
            raise RejectedSpec(f"unknown loss kind {self.kind!r}")
        if self.kind == "linear" and (self.a_pos != 1.0 or self.a_neg != 1.0):
            raise RejectedSpec("linear loss has unit slopes; use piecewise_linear")

    @classmethod
    def linear(cls, level=Affine()):
        return cls("linear", level=_as_affine(level))

    @classmethod
    def piecewise_linear(cls, a_pos, a_neg, level=Affine()):
        return cls("piecewise_linear", level=_as_affine(level), a_pos=a_pos, a_neg=a_neg)

    @property
    def is_linear(self) -> bool:
        return self.a_pos == self.a_neg

    @property
    def c_lip(self) -> float:
        return min(self.a_pos, self.a_neg)

    @property
    def C_lip(self) -> float:
        return max(self.a_pos, self.a_neg)

    @property
    def mean_lipschitz(self) -> float:
        return self.C_lip / self.c_lip

    def threshold(self, t):
        """Zero of ``y -> l(t, y)``."""
        return self.level(t)

    def value(self, t, y):
        r = np.asarray(y, dtype=float) - self.level(t)
        if self.kind == "linear":
            return r
        return self.a_pos * np.maximum(r, 0.0) - self.a_neg * np.maximum(-r, 0.0)

    def discounted(self, A) -> "DiscountedLoss":
        return DiscountedLoss(self, A)


@dataclass(frozen=True)
class DiscountedLoss:
    """``(t, y) -> base(t, exp(-A(t)) y)``; same interface as :class:`LossSpec`."""

    base: LossSpec
    A: Affine

    @property
    def is_linear(self) -> bool:
        return self.base.is_linear

    @property
    def mean_lipschitz(self) -> float:
        return self.base.mean_lipschitz

    @property
    def C_lip(self) -> float:
        return self.base.C_lip

    def threshold(self, t):
        return math.exp(self.A.integral(t)) * self.base.threshold(t)

    def value(self, t, y):
        return self.base.value(t, math.exp(-self.A.integral(t)) * np.asarray(y, dtype=float))


def _as_affine(level):
    if isinstance(level, Affine):
        return level
    if np.isscalar(level):
        return Affine(float(level), 0.0)
    intercept, slope = level
    return Affine(float(intercept), float(slope))


@dataclass(frozen=True)
class ProblemSpec:
    terminal: TerminalSpec
    driver: DriverSpec
    loss: LossSpec
    T: float
    constants: AssumptionConstants
    d: int = 1

    @property
    def z_cap(self) -> float:
        if self.driver.z_cap is not None:
            return float(self.driver.z_cap)
        k = self.constants
        return 10.0 * k.L * math.exp(k.lam * self.T)

    def with_terminal(self, terminal: TerminalSpec) -> "ProblemSpec":
        return ProblemSpec(terminal, self.driver, self.loss, self.T, self.constants, self.d)


def eval_driver(spec: DriverSpec, t, y, z, z_cap=None):
    return spec.evaluate(t, y, z, z_cap=z_cap)


def eval_loss(spec, t, y):
    return spec.value(t, y)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    witness: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    C: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self):
        return [c.name for c in self.checks if not c.passed]

    def as_dict(self):
        return {
            "C": self.C,
            "checks": [
                {"name": c.name, "passed": c.passed, "witness": c.witness, "detail": c.detail}
                for c in self.checks
            ],
        }


def validate_problem(spec: ProblemSpec) -> ValidationReport:
    """Check the standing assumptions analytically on the catalog.

    Raises :class:`RejectedSpec` only on structural errors (non-increasing
    loss, nonpositive ``lam`` or horizon, unsupported dimension); every
    other assumption is reported with its witnessing quantity.
    """
    k, drv, loss, T = spec.constants, spec.driver, spec.loss, spec.T
    if not T > 0:
        raise RejectedSpec(f"horizon T must be positive, got {T}")
    if not k.lam > 0:
        raise RejectedSpec(f"lambda must be positive, got {k.lam}")
    if not (loss.a_pos > 0 and loss.a_neg > 0):
        raise RejectedSpec("loss slopes must be positive (strictly increasing loss)")
    if spec.d != 1:
        raise RejectedSpec("only one-dimensional Brownian motion is supported")
    if k.L < 0 or k.C <= 0 or not (0 < k.c_loss <= k.C_loss):
        raise RejectedSpec("constants must satisfy L >= 0, C > 0, 0 < c_loss <= C_loss")
    if spec.terminal.kind == "squared_brownian" and drv.gamma != 0.0:
        raise RejectedSpec("unbounded squared-Brownian terminal requires gamma = 0")

    z_cap = spec.z_cap
    checks = []
    bound = spec.terminal.bound
    checks.append(AssumptionCheck(
        "H_xi", bound <= k.L, bound,
        "terminal bound" if math.isfinite(bound) else "unbounded terminal admitted (quadratic-free driver)",
    ))
    checks.append(AssumptionCheck("H_f(1)", abs(drv.kappa) <= k.L, abs(drv.kappa), "|f(t,0,0)| <= L"))
    y_lip = abs(drv.alpha) + drv.a.sup_abs(T)
    checks.append(AssumptionCheck("H_f(2):y", y_lip <= k.lam, y_lip, "|alpha| + sup|a| <= lambda"))
    z_lip = abs(drv.beta) + 2.0 * drv.gamma * z_cap
    checks.append(AssumptionCheck(
        "H_f(2):z", z_lip <= k.lam * (1.0 + 2.0 * z_cap), z_lip,
        f"|beta| + 2 gamma z_cap <= lambda (1 + 2 z_cap), z_cap={z_cap:g}",
    ))
    sup_f0 = abs(drv.kappa) if drv.y_free else math.inf
    checks.append(AssumptionCheck("H_f'", sup_f0 <= k.L, sup_f0, "sup |f(t,y,0)| <= L"))
    checks.append(AssumptionCheck("H_l(2)", True, loss.c_lip, "minimal slope > 0"))
    checks.append(AssumptionCheck("H_l(3)", True, loss.c_lip, "E[l(t, inf)] = inf for positive slopes"))
    growth = loss.C_lip * (1.0 + loss.level.sup_abs(T))
    checks.append(AssumptionCheck("H_l(4)", math.isfinite(growth), growth, "|l(t,y)| <= C_growth (1 + |y|)"))
    derived_C = loss.mean_lipschitz
    checks.append(AssumptionCheck("H_L", k.C >= derived_C, derived_C, "C >= C_l / c_l"))
    bilip_ok = k.c_loss <= loss.c_lip and k.C_loss >= loss.C_lip
    checks.append(AssumptionCheck("bi-Lipschitz", bilip_ok, loss.C_lip / loss.c_lip, "declared c_l, C_l bracket the slopes"))
    L0 = max(loss.level(0.0), loss.level(T), 0.0)
    checks.append(AssumptionCheck("|L_t(0)|<=L", L0 <= k.L, L0, "shift of the zero variable"))
    return ValidationReport(tuple(checks), derived_C)
