"""Command-line entry point: ``kirchhoff-fem solve|convergence|decay|eigen``.

Exit status is 0 on success, 1 on usage errors and 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .assembly import assemble, h1_error, interpolate, l2_error, l2_norm
from .harness import (
    DT_RULES,
    DegenerateFitError,
    convergence_study,
    decay_study,
    discrete_eigenvalue,
    format_table,
    parse_levels,
    write_convergence_csv,
    write_plot_script,
    write_series_csv,
)
from .mesh import MeshError, build_uniform_mesh
from .problems import PROBLEMS, get_problem
from .schemes import SCHEMES, NonlinearSolveError, SchemeConfig, SimulationError, check_stability, run_simulation
from .sparse import SolverError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

# built-in defaults per subcommand; --config values sit between these and flags
DEFAULTS = {
    "solve": dict(problem="ex1", level=3, scheme="mbe", dt=1e-3, t_end=1.0, tol=1e-10),
    "convergence": dict(problem="ex1", levels="0..4", scheme="mbe", dt_rule="h2", t_end=1.0, tol=1e-10),
    "decay": dict(problem="ex3", level=4, scheme="be", dt=1e-3, t_end=0.5, tol=1e-10),
    "eigen": dict(level=4, tol=1e-10),
}

NUMERICAL_ERRORS = (SolverError, NonlinearSolveError, SimulationError, DegenerateFitError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kirchhoff-fem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(name, help, *, level=True, levels=False, dt=True):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path, help="JSON file with flag values (flags win)")
        p.add_argument("--tol", type=float, help="linear solver relative tolerance")
        if name != "eigen":
            p.add_argument("--problem", choices=sorted(PROBLEMS))
            p.add_argument("--scheme", choices=SCHEMES)
            p.add_argument("--t-end", dest="t_end", type=float)
            p.add_argument("--out", type=Path)
        if level:
            p.add_argument("--level", type=int)
        if levels:
            p.add_argument("--levels", help="inclusive range a..b")
            p.add_argument("--dt-rule", dest="dt_rule", choices=DT_RULES)
        if dt:
            p.add_argument("--dt", type=float)
        return p

    common("solve", "run one simulation")
    common("convergence", "errors and rates over mesh levels", level=False, levels=True)
    decay = common("decay", "time series and fitted decay slopes")
    decay.add_argument("--window", help="fit interval a..b (default: latter half)")
    common("eigen", "smallest discrete Dirichlet eigenvalue", dt=False)
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    values = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        for key, val in config.items():
            values[key.replace("-", "_")] = val
    for key, val in vars(args).items():
        if val is not None and key not in ("command", "config", "verbose"):
            values[key] = val
    return values


def _cmd_solve(v: dict) -> int:
    problem = get_problem(v["problem"])
    cfg = SchemeConfig(kind=v["scheme"], dt=float(v["dt"]), t_end=float(v["t_end"]),
                       linear_tol=float(v["tol"]))
    sys_ = assemble(build_uniform_mesh(int(v["level"])))
    U, series = run_simulation(problem, sys_, cfg)
    t = series[-1].t
    print(f"{problem.name}: {cfg.kind} scheme, level {v['level']}, dt={cfg.dt:g}, {cfg.n_steps} steps to t={t:g}")
    print(f"  ||U||={series[-1].l2_norm:.6e}  ||grad U||={series[-1].h1_seminorm:.6e}  mu={series[-1].mu:.10f}")
    if problem.has_exact:
        print(f"  L2 error={l2_error(problem.exact_u, U, t, sys_):.6e}  "
              f"H1 error={h1_error(problem.exact_grad, U, t, sys_):.6e}")
    u0_norm = l2_norm(interpolate(problem.u0, sys_.mesh), sys_)
    report = check_stability(series, u0_norm, [r.f_norm for r in series], cfg.dt, cfg.kind)
    print(f"  stability: {report.message}")
    if v.get("out"):
        path = write_series_csv(series, v["out"])
        write_plot_script(path, "decay")
        print(f"  wrote {path}")
    return EXIT_OK


def _cmd_convergence(v: dict) -> int:
    problem = get_problem(v["problem"])
    levels = parse_levels(str(v["levels"]))
    rows = convergence_study(problem, levels, scheme=v["scheme"], dt_rule=v["dt_rule"],
                             dt=v.get("dt"), t_end=float(v["t_end"]), linear_tol=float(v["tol"]))
    print(format_table(rows))
    if v.get("out"):
        path = write_convergence_csv(rows, v["out"])
        write_plot_script(path, "convergence")
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_decay(v: dict) -> int:
    problem = get_problem(v["problem"])
    window = None
    if v.get("window"):
        a, b = str(v["window"]).split("..", 1)
        window = (float(a), float(b))
    series, fit = decay_study(problem, level=int(v["level"]), dt=float(v["dt"]),
                              t_end=float(v["t_end"]), scheme=v["scheme"], window=window,
                              out=v.get("out"), linear_tol=float(v["tol"]))
    print(f"{problem.name}: fit over t in [{fit.t_window[0]:g}, {fit.t_window[1]:g}] ({fit.n_samples} samples)")
    print(f"  slope log||U||      = {fit.slope:.6f}  (rms residual {fit.residual:.2e})")
    print(f"  slope log||grad U|| = {fit.slope_h1:.6f}  (rms residual {fit.residual_h1:.2e})")
    print(f"  -lambda_1/2 = {-math.pi**2:.6f}")
    if v.get("out"):
        print(f"  wrote {v['out']}")
    return EXIT_OK


def _cmd_eigen(v: dict) -> int:
    level = int(v["level"])
    lam = discrete_eigenvalue(level, tol=float(v["tol"]))
    exact = 2 * math.pi**2
    print(f"level {level}: lambda_1^h = {lam:.10f}  (2 pi^2 = {exact:.10f}, excess {100 * (lam / exact - 1):.4f}%)")
    return EXIT_OK


COMMANDS = {"solve": _cmd_solve, "convergence": _cmd_convergence, "decay": _cmd_decay, "eigen": _cmd_eigen}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        values = _resolve(args)
        return COMMANDS[args.command](values)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, MeshError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
