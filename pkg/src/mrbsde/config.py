"""Scenario configuration files (TOML)."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import ConfigError
from .problem import (
    Affine,
    AssumptionConstants,
    DriverSpec,
    LossSpec,
    ProblemSpec,
    TerminalSpec,
)
from .solver import SolverConfig

__all__ = ["NumericConfig", "OutputConfig", "ScenarioConfig", "load_config", "parse_config", "bundled_path"]

ORACLE_TAGS = ("example46-1", "example46-2", "linear-simple")


@dataclass(frozen=True)
class NumericConfig:
    """Discretization and solver knobs; defaults match :class:`SolverConfig`."""

    N: int = 64
    M: int = 100_000
    seed: int = 0
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
    z_cap: Optional[float] = None
    solver: str = "auto"
    check_determinism: bool = True

    def solver_config(self) -> SolverConfig:
        names = {f.name for f in fields(SolverConfig)}
        return SolverConfig(**{k: getattr(self, k) for k in names})


@dataclass(frozen=True)
class OutputConfig:
    csv_path: str = ""
    summary_path: str = ""
    dump_paths: bool = False
    gnuplot: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    problem: ProblemSpec
    numeric: NumericConfig = field(default_factory=NumericConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    description: str = ""
    tag: str = ""


def _take(table, allowed, where):
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(extra))}")
    return table


def _affine(value, where):
    if isinstance(value, (int, float)):
        return Affine(float(value), 0.0)
    if isinstance(value, list) and len(value) == 2:
        return Affine(float(value[0]), float(value[1]))
    raise ConfigError(f"{where}: expected a number or [intercept, slope]")


def _problem(table) -> ProblemSpec:
    _take(table, ("T", "d", "terminal", "driver", "loss", "constants"), "problem")
    try:
        term = dict(_take(table.get("terminal", {}), ("kind", "coefficients", "clip_bound", "scale", "value", "shift"),
                          "problem.terminal"))
        if "kind" not in term:
            raise ConfigError("problem.terminal.kind is required")
        if "coefficients" in term:
            term["coefficients"] = tuple(term["coefficients"])
        terminal = TerminalSpec(**term)

        drv = dict(_take(table.get("driver", {}), ("a", "alpha", "beta", "gamma", "kappa", "z_cap"), "problem.driver"))
        if "a" in drv:
            drv["a"] = _affine(drv["a"], "problem.driver.a")
        driver = DriverSpec(**drv)

        loss_t = dict(_take(table.get("loss", {}), ("kind", "level", "a_pos", "a_neg"), "problem.loss"))
        if "level" in loss_t:
            loss_t["level"] = _affine(loss_t["level"], "problem.loss.level")
        loss = LossSpec(**loss_t)

        const = dict(_take(table.get("constants", {}), ("L", "lambda", "C", "c_loss", "C_loss"), "problem.constants"))
        if "L" not in const or "lambda" not in const:
            raise ConfigError("problem.constants needs L and lambda")
        const["lam"] = const.pop("lambda")
        constants = AssumptionConstants(**{k: float(v) for k, v in const.items()})
        return ProblemSpec(terminal, driver, loss, float(table["T"]), constants, int(table.get("d", 1)))
    except KeyError as exc:
        raise ConfigError(f"missing key {exc} in [problem]") from exc
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _check_numeric(num: NumericConfig, T: float):
    if num.N < 1 or num.M < 1:
        raise ConfigError("N and M must be at least 1")
    for name in ("ridge",):
        if getattr(num, name) < 0:
            raise ConfigError(f"{name} must be nonnegative")
    for name in ("picard_tol", "tol_flat", "tol_constraint", "tol_L", "rho_max"):
        if not getattr(num, name) > 0:
            raise ConfigError(f"{name} must be positive")
    h_init = T / 4 if num.h_init is None else num.h_init
    h_min = T / num.N if num.h_min is None else num.h_min
    if not (0 < h_min <= h_init <= T):
        raise ConfigError(f"need 0 < h_min <= h_init <= T, got h_min={h_min}, h_init={h_init}, T={T}")
    if num.solver not in ("auto", "simple", "global"):
        raise ConfigError(f"numeric.solver must be auto, simple or global, got {num.solver!r}")


def parse_config(data: dict, overrides: Optional[dict] = None) -> ScenarioConfig:
    _take(data, ("name", "description", "tag", "problem", "numeric", "outputs"), "top level")
    if "name" not in data or "problem" not in data:
        raise ConfigError("config needs 'name' and a [problem] table")
    problem = _problem(data["problem"])
    if not problem.T > 0:
        raise ConfigError(f"problem.T must be positive, got {problem.T}")
    num_t = dict(_take(data.get("numeric", {}), [f.name for f in fields(NumericConfig)], "numeric"))
    num_t.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "mode" in num_t:
        num_t["mode"] = str(num_t["mode"]).lower()
    numeric = NumericConfig(**num_t)
    _check_numeric(numeric, problem.T)
    try:
        numeric.solver_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if numeric.z_cap is not None:
        from dataclasses import replace

        problem = replace(problem, driver=replace(problem.driver, z_cap=float(numeric.z_cap)))
    name = str(data["name"])
    out_t = dict(_take(data.get("outputs", {}), [f.name for f in fields(OutputConfig)], "outputs"))
    out_t.setdefault("csv_path", f"{name}.csv")
    out_t.setdefault("summary_path", f"{name}.json")
    tag = str(data.get("tag", ""))
    if tag and tag not in ORACLE_TAGS:
        raise ConfigError(f"unknown oracle tag {tag!r}; known: {', '.join(ORACLE_TAGS)}")
    return ScenarioConfig(name, problem, numeric, OutputConfig(**out_t), str(data.get("description", "")), tag)


def bundled_path(name: str) -> Optional[Path]:
    path = resources.files("mrbsde") / "scenarios" / f"{name}.toml"
    return Path(str(path)) if path.is_file() else None


def load_config(path_or_name, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Load a scenario from a TOML file or a bundled scenario name."""
    path = Path(path_or_name)
    if not path.is_file():
        bundled = bundled_path(str(path_or_name).removesuffix(".toml"))
        if bundled is None:
            raise ConfigError(f"no such config file or bundled scenario: {path_or_name}")
        path = bundled
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, overrides)
