"""Command line front end: ``mrbsde run|list|compare``.

Exit codes: 0 accepted solve, 2 feasibility or flatness failure, 3 no
convergence (including solver breakdowns and the theoretical-window
guardrail), 4 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, load_config, tomllib
from .exceptions import (
    BracketFailure,
    ConfigError,
    DivergenceDetected,
    GridMismatch,
    InadmissibleTerminal,
    InvalidGrid,
    NoConvergence,
    RejectedSpec,
    SingularDesign,
)
from .problem import validate_problem
from .reference import Example46, example46_mean, example46_solution, linear_loss_simple_oracle
from .reflection import node_loss_means
from .simulation import build_grid, save_ensemble, simulate_brownian
from .solver import (
    compute_global_bound,
    compute_local_constants,
    global_solve,
    k_determinism_check,
    simple_reflected_solve,
    theoretical_window,
)

EXIT_OK, EXIT_INFEASIBLE, EXIT_NO_CONVERGENCE, EXIT_CONFIG = 0, 2, 3, 4

CSV_COLUMNS = ["t", "K", "mean_Y", "mean_loss", "stderr_Y"]
ORACLE_COLUMNS = ["oracle_K", "oracle_mean_Y"]


@dataclass
class RunSummary:
    scenario: str
    exit_code: int = EXIT_CONFIG
    accepted: bool = False
    message: str = ""
    wall_time: float = 0.0
    solver: str = ""
    iterations: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    oracle_errors: dict = field(default_factory=dict)
    validation: dict = field(default_factory=dict)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _oracle(cfg: ScenarioConfig, grid):
    p = cfg.problem
    t = grid.nodes
    if cfg.tag in ("example46-1", "example46-2"):
        sc = Example46.ONE if cfg.tag == "example46-1" else Example46.TWO
        return example46_solution(sc, t, 0.0, p.T)[2] * np.ones_like(t), example46_mean(sc, t, p.T)
    if cfg.tag == "linear-simple":
        drv, term = p.driver, p.terminal
        if term.kind == "constant":
            xi_mean, slope = term.value + term.shift, 0.0
        elif term.kind == "clipped_polynomial" and len(term.coefficients) <= 2:
            coeffs = term.coefficients + (0.0,) * (2 - len(term.coefficients))
            xi_mean, slope = coeffs[0] + term.shift, coeffs[1]
        else:
            return None
        # the representation coefficient is the constant slope, so f(Z) is constant
        c = drv.beta * abs(slope) + drv.gamma * slope * slope + drv.kappa
        res = linear_loss_simple_oracle(xi_mean, c, p.loss.level, grid)
        return res.K, res.mean_y
    return None


def _constants_echo(problem):
    k = problem.constants
    local = compute_local_constants(k, problem.T)
    bound = compute_global_bound(k, problem.T)
    return {
        "A0": local.A0,
        "delta_A": local.delta_A,
        "hat_delta_A": local.hat_delta_A,
        "Lbar1": bound.Lbar1,
        "Lbar2": bound.Lbar2,
        "Lbar": bound.Lbar,
        "theoretical_window": theoretical_window(k, problem.T),
        "z_cap": problem.z_cap,
    }


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_csv(path, sol, loss, oracle=None):
    means = sol.mean_y()
    loss_means = node_loss_means(loss, sol.y_samples, sol.times)
    stderr = sol.stderr_y()
    header = CSV_COLUMNS + (ORACLE_COLUMNS if oracle is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, t in enumerate(sol.times):
            row = [t, sol.K.values[i], means[i], loss_means[i], stderr[i]]
            if oracle is not None:
                row += [oracle[0][i], oracle[1][i]]
            w.writerow([_fmt(v) for v in row])


def write_gnuplot(path, csv_path, with_oracle):
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 't'",
        f"plot '{csv_path}' using 1:2 with lines title 'K', \\",
        f"     '{csv_path}' using 1:3 with lines title 'E[Y]'" + (", \\" if with_oracle else ""),
    ]
    if with_oracle:
        lines += [
            f"     '{csv_path}' using 1:6 with points title 'K oracle', \\",
            f"     '{csv_path}' using 1:7 with points title 'E[Y] oracle'",
        ]
    Path(path).write_text("\n".join(lines) + "\n")


def run_scenario(config, overrides=None, out_dir=None):
    """Run one scenario; returns ``(exit_code, RunSummary)`` and writes the artifacts."""
    start = time.perf_counter()
    try:
        cfg = load_config(config, overrides)
        validation = validate_problem(cfg.problem)
        grid = build_grid(cfg.problem.T, cfg.numeric.N)
    except (ConfigError, RejectedSpec, InvalidGrid, OSError) as exc:
        summary = RunSummary(str(config), EXIT_CONFIG, message=f"config error: {exc}")
        return EXIT_CONFIG, summary

    out_dir = Path(out_dir) if out_dir is not None else Path.cwd()
    summary = RunSummary(cfg.name, validation=validation.as_dict(), constants=_constants_echo(cfg.problem))
    num = cfg.numeric
    solver_cfg = num.solver_config()
    method = num.solver
    if method == "auto":
        simple_ok = cfg.problem.driver.alpha == 0.0 and num.windows is None and num.mode == "adaptive"
        method = "simple" if simple_ok else "global"
    solver = simple_reflected_solve if method == "simple" else global_solve
    summary.solver = method

    code = EXIT_OK
    sol = None
    try:
        ensemble = simulate_brownian(grid, num.M, cfg.problem.d, seed=num.seed)
        if cfg.outputs.dump_paths:
            save_ensemble(ensemble, out_dir / f"{Path(cfg.outputs.csv_path).stem}.paths")
        out = solver(cfg.problem, ensemble, solver_cfg)
        sol, traces = out if isinstance(out, tuple) else (out, [])
        summary.iterations = [tr.as_dict() for tr in reversed(traces)]
        summary.windows = [[float(grid.nodes[a]), float(grid.nodes[b])] for a, b in sol.windows]
        if num.check_determinism:
            report = k_determinism_check(cfg.problem, ensemble, solver_cfg, solver=solver)
            sol.diagnostics["k_determinism"] = report.normalized
            sol.diagnostics["k_determinism_passed"] = report.passed()
        summary.diagnostics = dict(sol.diagnostics)
        accepted = (sol.diagnostics["flatness"] <= num.tol_flat
                    and sol.diagnostics["constraint_margin"] >= -num.tol_constraint)
        summary.accepted = bool(accepted)
        code = EXIT_OK if accepted else EXIT_INFEASIBLE
        summary.message = "accepted" if accepted else "flatness or feasibility tolerance violated"
    except InadmissibleTerminal as exc:
        code, summary.message = EXIT_INFEASIBLE, str(exc)
    except (NoConvergence, DivergenceDetected, SingularDesign, BracketFailure) as exc:
        code, summary.message = EXIT_NO_CONVERGENCE, f"{type(exc).__name__}: {exc}"
        trace = getattr(exc, "trace", None)
        if trace is not None:
            traces = trace if isinstance(trace, list) else [trace]
            summary.iterations = [tr.as_dict() for tr in traces]
    except (RejectedSpec, ValueError) as exc:
        code, summary.message = EXIT_CONFIG, f"config error: {exc}"

    if sol is not None:
        oracle = _oracle(cfg, grid)
        csv_path = out_dir / cfg.outputs.csv_path
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(csv_path, sol, cfg.problem.loss, oracle)
        if oracle is not None:
            summary.oracle_errors = {
                "K_max_abs": float(np.max(np.abs(sol.K.values - oracle[0]))),
                "mean_Y_max_abs": float(np.max(np.abs(sol.mean_y() - oracle[1]))),
            }
        if cfg.outputs.gnuplot:
            write_gnuplot(csv_path.with_suffix(".gp"), csv_path.name, oracle is not None)

    summary.exit_code = code
    summary.wall_time = time.perf_counter() - start
    summary_path = out_dir / cfg.outputs.summary_path
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.write_text(json.dumps(_json_safe(asdict(summary)), indent=2) + "\n")
    return code, summary


def list_scenarios(extra_dir=None):
    """``[(name, description)]`` for bundled scenarios plus any in ``extra_dir``."""
    found = {}
    dirs = [Path(str(resources.files("mrbsde") / "scenarios"))]
    if extra_dir is not None:
        dirs.append(Path(extra_dir))
    for d in dirs:
        for path in sorted(d.glob("*.toml")):
            try:
                with open(path, "rb") as fh:
                    data = tomllib.load(fh)
            except (OSError, tomllib.TOMLDecodeError):
                continue
            found.setdefault(path.stem, str(data.get("description", "")))
    return sorted(found.items())


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise GridMismatch(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    return header, data


def compare_runs(csv_a, csv_b):
    """Per-column ``(max abs difference, row of the maximizer)`` of two run CSVs."""
    ha, a = _read_csv(csv_a)
    hb, b = _read_csv(csv_b)
    if a.shape[0] != b.shape[0] or "t" not in ha or "t" not in hb:
        raise GridMismatch(f"grids differ: {a.shape[0]} vs {b.shape[0]} rows")
    if not np.array_equal(a[:, ha.index("t")], b[:, hb.index("t")]):
        raise GridMismatch("time columns differ")
    report = {}
    for col in ha:
        if col == "t" or col not in hb:
            continue
        diff = np.abs(a[:, ha.index(col)] - b[:, hb.index(col)])
        row = int(np.argmax(diff)) if diff.size else 0
        report[col] = (float(diff[row]) if diff.size else 0.0, row)
    return report


def build_parser():
    parser = argparse.ArgumentParser(prog="mrbsde", description="Quadratic BSDEs with mean reflection")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve a scenario config (file path or bundled name)")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--paths", type=int, dest="M")
    run.add_argument("--steps", type=int, dest="N")
    run.add_argument("--mode", choices=["adaptive", "theoretical", "Adaptive", "Theoretical"])
    run.add_argument("--out-dir", default=None)
    lst = sub.add_parser("list", help="list bundled scenarios")
    lst.add_argument("--extra", default=None, help="directory with additional scenario files")
    cmp_ = sub.add_parser("compare", help="max-abs column differences of two run CSVs")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name, desc in list_scenarios(args.extra):
            print(f"{name:24s} {desc}")
        return EXIT_OK
    if args.command == "compare":
        try:
            report = compare_runs(args.a, args.b)
        except (GridMismatch, OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for col, (diff, row) in report.items():
            print(f"{col:16s} {diff:.17g} (row {row})")
        return EXIT_OK
    overrides = {"seed": args.seed, "M": args.M, "N": args.N, "mode": args.mode}
    code, summary = run_scenario(args.config, overrides, args.out_dir)
    if code != EXIT_OK:
        print(f"{summary.scenario}: exit {code}: {summary.message}", file=sys.stderr)
    else:
        d = summary.diagnostics
        print(f"{summary.scenario}: accepted (flatness={d['flatness']:.3g}, "
              f"margin={d['constraint_margin']:.3g}, wall={summary.wall_time:.1f}s)")
    return code


if __name__ == "__main__":
    sys.exit(main())
