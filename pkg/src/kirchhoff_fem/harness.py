"""Experiment drivers: convergence tables, decay fits and CSV/plot output."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .assembly import assemble, h1_error, h1_full_error, l2_error
from .mesh import build_uniform_mesh, uniform_divisions
from .problems import ProblemSpec
from .schemes import SchemeConfig, TimeSeriesRecord, run_simulation
from .sparse import smallest_generalized_eigenvalue

logger = logging.getLogger(__name__)

CONVERGENCE_HEADER = ["level", "h", "dt", "l2_error", "l2_rate", "h1_error", "h1_rate"]
DECAY_HEADER = ["t", "l2_norm", "h1_seminorm", "mu"]
DT_RULES = ("h2", "fixed")


class DegenerateFitError(ValueError):
    """The decay fit has no usable (positive) samples."""


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    h: float
    dt: float
    l2_error: float
    h1_error: float
    l2_rate: Optional[float] = None
    h1_rate: Optional[float] = None
    h1_full_error: Optional[float] = None


@dataclass(frozen=True)
class DecayFit:
    t_window: tuple[float, float]
    slope: float
    slope_h1: float
    residual: float
    residual_h1: float
    n_samples: int


def mesh_parameter(level: int) -> float:
    """Nominal ``h = 1/n`` of the uniform level-``level`` mesh (cell size, not diameter)."""
    return 1.0 / uniform_divisions(level)


def time_step_for(level: int, dt_rule: str = "h2", dt: Optional[float] = None, c: float = 1.0) -> float:
    if dt_rule == "h2":
        return c * mesh_parameter(level) ** 2
    if dt_rule == "fixed":
        if dt is None:
            raise ValueError("dt_rule 'fixed' needs an explicit dt")
        return dt
    raise ValueError(f"unknown dt rule {dt_rule!r}; choose from {DT_RULES}")


def rates(errors: Sequence[float]) -> list[Optional[float]]:
    """log2 of consecutive error ratios; ``None`` for the first entry."""
    return [None] + [math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]


def parse_levels(text: str) -> list[int]:
    """Parse ``"a..b"`` (inclusive) or a single level."""
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"empty level range {text!r}")
        return list(range(lo, hi + 1))
    return [int(text)]


def convergence_study(
    problem: ProblemSpec,
    levels: Iterable[int],
    scheme: str = "mbe",
    dt_rule: str = "h2",
    dt: Optional[float] = None,
    c: float = 1.0,
    t_end: float = 1.0,
    linear_tol: float = 1e-10,
    nonlinear_tol: float = 1e-10,
) -> list[ConvergenceRow]:
    """Run ``problem`` to ``t_end`` on each level and tabulate final-time errors."""
    if not problem.has_exact:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    raw = []
    for level in levels:
        k = time_step_for(level, dt_rule, dt, c)
        cfg = SchemeConfig(kind=scheme, dt=k, t_end=t_end, linear_tol=linear_tol,
                           nonlinear_tol=nonlinear_tol, diagnostics=False)
        sys = assemble(build_uniform_mesh(level))
        U, _ = run_simulation(problem, sys, cfg)
        t = cfg.n_steps * k
        e0 = l2_error(problem.exact_u, U, t, sys)
        e1 = h1_error(problem.exact_grad, U, t, sys)
        full = h1_full_error(problem.exact_u, problem.exact_grad, U, t, sys)
        logger.info("level %d: dt=%.3g L2=%.6e H1=%.6e", level, k, e0, e1)
        raw.append((level, mesh_parameter(level), k, e0, e1, full))

    l2_rates = rates([r[3] for r in raw])
    h1_rates = rates([r[4] for r in raw])
    return [
        ConvergenceRow(level, h, k, e0, e1, r0, r1, full)
        for (level, h, k, e0, e1, full), r0, r1 in zip(raw, l2_rates, h1_rates)
    ]


def fit_decay(series: Sequence[TimeSeriesRecord], window: Optional[tuple[float, float]] = None) -> DecayFit:
    """Least-squares slopes of ``log||U||`` and ``log||grad U||`` against t.

    The default window is the latter half of the simulated interval.
    """
    if not series:
        raise DegenerateFitError("empty time series")
    t = np.array([r.t for r in series])
    if window is None:
        window = (0.5 * t[-1], t[-1])
    lo, hi = window
    eps = 1e-9 * max(abs(hi), 1.0)
    sel = (t >= lo - eps) & (t <= hi + eps)
    if sel.sum() < 10:
        raise ValueError(f"decay fit needs at least 10 samples in {window}, got {int(sel.sum())}")
    l2 = np.array([r.l2_norm for r in series])[sel]
    h1 = np.array([r.h1_seminorm for r in series])[sel]
    if np.any(l2 <= 0) or np.any(h1 <= 0) or not np.all(np.isfinite(l2) & np.isfinite(h1)):
        raise DegenerateFitError("norms vanish in the fit window; nothing to fit")
    ts = t[sel]

    def fit(values):
        coef, res, *_ = np.polyfit(ts, np.log(values), 1, full=True)
        rms = math.sqrt(res[0] / len(ts)) if len(res) else 0.0
        return float(coef[0]), rms

    slope, res0 = fit(l2)
    slope_h1, res1 = fit(h1)
    return DecayFit((float(lo), float(hi)), slope, slope_h1, res0, res1, int(sel.sum()))


def decay_study(
    problem: ProblemSpec,
    level: int = 4,
    dt: float = 1e-3,
    t_end: float = 0.5,
    scheme: str = "be",
    window: Optional[tuple[float, float]] = None,
    out: Optional[Path | str] = None,
    linear_tol: float = 1e-10,
    nonlinear_tol: float = 1e-10,
) -> tuple[list[TimeSeriesRecord], DecayFit]:
    if t_end < 20 * dt:
        raise ValueError("decay study needs t_end >= 20 dt")
    cfg = SchemeConfig(kind=scheme, dt=dt, t_end=t_end, linear_tol=linear_tol,
                       nonlinear_tol=nonlinear_tol)
    _, series = run_simulation(problem, build_uniform_mesh(level), cfg)
    if out is not None:
        write_series_csv(series, out)
        write_plot_script(out, "decay")
    return series, fit_decay(series, window)


def discrete_eigenvalue(level: int, tol: float = 1e-10) -> float:
    sys = assemble(build_uniform_mesh(level))
    return smallest_generalized_eigenvalue(sys.A, sys.M, tol=tol)


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else format(x, ".17g")


def _parse(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def write_convergence_csv(rows: Sequence[ConvergenceRow], path: Path | str) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CONVERGENCE_HEADER)
        for r in rows:
            writer.writerow([r.level, _fmt(r.h), _fmt(r.dt), _fmt(r.l2_error), _fmt(r.l2_rate),
                             _fmt(r.h1_error), _fmt(r.h1_rate)])
    return path


def read_convergence_csv(path: Path | str) -> list[ConvergenceRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CONVERGENCE_HEADER:
            raise ValueError(f"unexpected convergence header {reader.fieldnames}")
        return [
            ConvergenceRow(
                level=int(row["level"]),
                h=float(row["h"]),
                dt=float(row["dt"]),
                l2_error=float(row["l2_error"]),
                h1_error=float(row["h1_error"]),
                l2_rate=_parse(row["l2_rate"]),
                h1_rate=_parse(row["h1_rate"]),
            )
            for row in reader
        ]


def write_series_csv(series: Sequence[TimeSeriesRecord], path: Path | str) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DECAY_HEADER)
        for r in series:
            writer.writerow([_fmt(r.t), _fmt(r.l2_norm), _fmt(r.h1_seminorm), _fmt(r.mu)])
    return path


def read_series_csv(path: Path | str) -> list[TimeSeriesRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != DECAY_HEADER:
            raise ValueError(f"unexpected decay header {reader.fieldnames}")
        return [
            TimeSeriesRecord(t=float(r["t"]), l2_norm=float(r["l2_norm"]),
                             h1_seminorm=float(r["h1_seminorm"]), mu=float(r["mu"]))
            for r in reader
        ]


_DECAY_PLOT = '''\
"""Plot the decay time series in {csv_name} on a log scale."""
import csv
import matplotlib.pyplot as plt

with open({csv_name!r}) as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["t"]) for r in rows]
fig, ax = plt.subplots()
ax.semilogy(t, [float(r["l2_norm"]) for r in rows], label="||U^n||")
ax.semilogy(t, [float(r["h1_seminorm"]) for r in rows], label="||grad U^n||")
ax.set_xlabel("t")
ax.legend()
fig.savefig({png_name!r}, dpi=150)
'''

_CONVERGENCE_PLOT = '''\
"""Log-log error plot for the convergence table in {csv_name}."""
import csv
import matplotlib.pyplot as plt

with open({csv_name!r}) as fh:
    rows = list(csv.DictReader(fh))
h = [float(r["h"]) for r in rows]
fig, ax = plt.subplots()
ax.loglog(h, [float(r["l2_error"]) for r in rows], "o-", label="L2 error")
ax.loglog(h, [float(r["h1_error"]) for r in rows], "s-", label="H1 seminorm error")
ax.set_xlabel("h")
ax.legend()
fig.savefig({png_name!r}, dpi=150)
'''


def write_plot_script(csv_path: Path | str, kind: str, script_path: Path | str | None = None) -> Path:
    """Write a matplotlib script next to ``csv_path`` that re-plots it."""
    csv_path = Path(csv_path)
    template = {"decay": _DECAY_PLOT, "convergence": _CONVERGENCE_PLOT}[kind]
    script_path = Path(script_path) if script_path else csv_path.with_suffix(".plot.py")
    script_path.write_text(
        template.format(csv_name=csv_path.name, png_name=csv_path.with_suffix(".png").name)
    )
    return script_path


def format_table(rows: Sequence[ConvergenceRow]) -> str:
    lines = [f"{'level':>5} {'h':>9} {'dt':>10} {'L2 error':>12} {'rate':>7} "
             f"{'H1 error':>12} {'rate':>7} {'H1 full':>12}"]
    for r in rows:
        rate0 = "" if r.l2_rate is None else f"{r.l2_rate:.4f}"
        rate1 = "" if r.h1_rate is None else f"{r.h1_rate:.4f}"
        full = "" if r.h1_full_error is None else f"{r.h1_full_error:.6e}"
        lines.append(f"{r.level:>5} {r.h:>9.6f} {r.dt:>10.3e} {r.l2_error:>12.6e} {rate0:>7} "
                     f"{r.h1_error:>12.6e} {rate1:>7} {full:>12}")
    return "\n".join(lines)
