"""Backward Euler time stepping for the nonlocal Kirchhoff heat equation.

Two schemes are provided:

* ``be_step``: fully implicit, coefficient ``1 + ||grad U^n||^2`` taken at
  the new time level. The nonlinear system is reduced to a scalar equation
  in the coefficient ``mu``: for frozen ``mu`` the step is the linear solve
  ``(M + k mu A) U(mu) = M U^{n-1} + k F^n``, and the step solution is the
  unique root of ``g(mu) = 1 + ||grad U(mu)||^2 - mu``. Because
  ``mu -> ||grad U(mu)||^2`` is nonincreasing, ``g`` is strictly
  decreasing with ``g(1) >= 0 >= g(1 + ||grad U(1)||^2)``, so a bracketed
  root-find always converges.
* ``mbe_step``: the linearized variant with the coefficient lagged to the
  previous level, one linear solve per step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .assembly import (
    MIDPOINT,
    FemSystem,
    NodalField,
    QuadratureRule,
    _discrete_laplacian_interior,
    assemble,
    function_l2_norm,
    interpolate,
    load_vector,
)
from .mesh import Mesh
from .problems import ProblemSpec
from .sparse import SolveReport, SolverError, cg_solve

logger = logging.getLogger(__name__)

SCHEMES = ("be", "mbe")
_ALIASES = {"backward_euler": "be", "modified_backward_euler": "mbe"}


class NonlinearSolveError(RuntimeError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    kind: str = "mbe"
    dt: float = 1e-3
    t_end: float = 1.0
    nonlinear_tol: float = 1e-10
    linear_tol: float = 1e-10
    max_nonlinear_iter: int = 200
    max_steps: int = 1_000_000
    diagnostics: bool = True

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in SCHEMES:
            raise ValueError(f"unknown scheme {self.kind!r}; choose 'be' or 'mbe'")
        object.__setattr__(self, "kind", kind)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"time step must be positive, got {self.dt}")
        if not self.t_end >= self.dt:
            raise ValueError(f"t_end ({self.t_end}) must be at least dt ({self.dt})")
        if self.nonlinear_tol <= 0 or self.linear_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_steps > self.max_steps:
            raise ValueError(f"{self.n_steps} steps exceeds the cap of {self.max_steps}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class StepResult:
    field: NodalField
    mu: float
    nonlinear_iters: int
    linear_report: SolveReport
    bracket: Optional[tuple[float, float]] = None
    bracket_values: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class TimeSeriesRecord:
    t: float
    l2_norm: float
    h1_seminorm: float
    mu: float
    f_norm: float = 0.0
    laplacian_norm: float = 0.0
    stability_lhs: float = 0.0
    stability_rhs: float = 0.0
    gradient_lhs: float = 0.0
    gradient_rhs: float = 0.0
    gradient_scale: float = 0.0

    @property
    def gradient_ineq_residual(self) -> float:
        """Slack of ``dt||grad U||^2 + mu ||Delta_h U||^2 <= ||f||^2`` (>= 0 when it holds)."""
        return self.gradient_rhs - self.gradient_lhs


def make_loader(f: Callable, sys: FemSystem, rule: QuadratureRule = MIDPOINT) -> Callable[[float], np.ndarray]:
    return lambda t: load_vector(f, t, sys, rule)


class _FrozenSolver:
    """Solves ``(M + k mu A) U = rhs`` for a sequence of ``mu`` values, warm-started."""

    def __init__(self, sys: FemSystem, rhs: np.ndarray, k: float, tol: float, x0: np.ndarray):
        self.sys = sys
        self.rhs = rhs
        self.k = k
        self.tol = tol
        self.x = x0.copy()
        self.iterations = 0
        self.worst_residual = 0.0
        self.cache: dict[float, tuple[np.ndarray, float]] = {}

    def solve(self, mu: float) -> tuple[np.ndarray, float]:
        """Return ``U(mu)`` and ``||grad U(mu)||^2``."""
        if mu in self.cache:
            return self.cache[mu]
        sys = self.sys
        mat = sys.M + (self.k * mu) * sys.A
        x, report = cg_solve(mat, self.rhs, tol=self.tol, x0=self.x)
        if not report.converged:
            raise SolverError(f"linear solve failed at mu={mu!r}: {report}")
        self.iterations += report.iterations
        self.worst_residual = max(self.worst_residual, report.residual_norm)
        self.x = x
        energy = sys.A.quadratic_form(x)
        self.cache[mu] = (x, energy)
        return x, energy

    def report(self) -> SolveReport:
        return SolveReport(self.iterations, self.worst_residual, True)


def _rhs(prev: NodalField, t_next: float, sys: FemSystem, f_loader, k: float) -> np.ndarray:
    return sys.M.matvec(sys.restrict(prev)) + k * f_loader(t_next)


def be_step(
    prev: NodalField,
    t_next: float,
    sys: FemSystem,
    f_loader: Callable[[float], np.ndarray],
    cfg: SchemeConfig,
    bracket: Optional[tuple[float, float]] = None,
    guess: Optional[np.ndarray] = None,
) -> StepResult:
    """One fully implicit backward Euler step.

    ``bracket`` optionally overrides the initial ``mu`` search interval and
    ``guess`` the CG starting vector (interior unknowns); endpoints that do
    not bracket the root are replaced by the default interval. The result is
    independent of both.
    """
    k = cfg.dt
    tol = cfg.nonlinear_tol
    rhs = _rhs(prev, t_next, sys, f_loader, k)
    x0 = sys.restrict(prev) if guess is None else np.asarray(guess, dtype=float)
    solver = _FrozenSolver(sys, rhs, k, _inner_tol(cfg, sys.A.quadratic_form(x0)), x0)

    def g(mu):
        return 1.0 + solver.solve(mu)[1] - mu

    _, energy_at_one = solver.solve(1.0)
    refined = _inner_tol(cfg, energy_at_one)
    if refined < solver.tol:
        solver.tol = refined
        solver.cache.clear()
        _, energy_at_one = solver.solve(1.0)
    lo, g_lo = 1.0, energy_at_one
    hi = 1.0 + energy_at_one
    evals = 1
    if g_lo <= tol:
        return _finish(solver, 1.0, evals, (lo, lo), (g_lo, g_lo))

    g_hi = g(hi)
    evals += 1
    # g(hi) > 0 would mean mu -> ||grad U(mu)||^2 increased; only possible via solver error
    if g_hi > tol + 1e-12 * hi:
        raise NonlinearSolveError(
            f"monotonicity check failed at t={t_next}: g(1)={g_lo:.3e}, g({hi:.6g})={g_hi:.3e}"
        )
    if abs(g_hi) <= tol:
        return _finish(solver, hi, evals, (lo, hi), (g_lo, g_hi))

    if bracket is not None:
        # user endpoints only ever shrink the default interval
        for end in bracket:
            if not lo < end < hi:
                continue
            val = g(end)
            evals += 1
            if abs(val) <= tol:
                return _finish(solver, end, evals, (end, end), (val, val))
            if val > 0:
                lo, g_lo = end, val
            else:
                hi, g_hi = end, val

    # Illinois regula falsi: secant steps inside a shrinking sign bracket,
    # with bisection as the fallback.
    true_lo, true_hi = g_lo, g_hi
    last_side = 0
    while evals < cfg.max_nonlinear_iter:
        c = (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
        if not lo < c < hi:
            c = 0.5 * (lo + hi)
        gc = g(c)
        evals += 1
        if abs(gc) <= tol:
            return _finish(solver, c, evals, (lo, hi), (true_lo, true_hi))
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            logger.warning("coefficient bracket collapsed at t=%g with |g|=%.2e > %.2e; "
                           "linear tolerance too loose for the nonlinear tolerance", t_next, abs(gc), tol)
            return _finish(solver, c, evals, (lo, hi), (true_lo, true_hi))
        if gc > 0:
            lo, g_lo, true_lo = c, gc, gc
            if last_side == 1:
                g_hi *= 0.5
            last_side = 1
        else:
            hi, g_hi, true_hi = c, gc, gc
            if last_side == -1:
                g_lo *= 0.5
            last_side = -1
    raise NonlinearSolveError(
        f"coefficient root-find did not converge in {cfg.max_nonlinear_iter} iterations "
        f"(t={t_next}, bracket [{lo!r}, {hi!r}])"
    )


def _inner_tol(cfg: SchemeConfig, energy: float) -> float:
    """CG tolerance fine enough that ``g(mu)`` is resolved to ``nonlinear_tol``."""
    return min(cfg.linear_tol, max(1e-14, 1e-2 * cfg.nonlinear_tol / (1.0 + energy)))


def _finish(solver: _FrozenSolver, mu, evals, bracket, values) -> StepResult:
    x, _ = solver.solve(mu)
    return StepResult(
        field=solver.sys.extend(x),
        mu=float(mu),
        nonlinear_iters=evals,
        linear_report=solver.report(),
        bracket=(float(bracket[0]), float(bracket[1])),
        bracket_values=(float(values[0]), float(values[1])),
    )


def mbe_step(
    prev: NodalField,
    t_next: float,
    sys: FemSystem,
    f_loader: Callable[[float], np.ndarray],
    cfg: SchemeConfig,
) -> StepResult:
    """One modified (linearized) backward Euler step."""
    k = cfg.dt
    v = sys.restrict(prev)
    mu = 1.0 + sys.A.quadratic_form(v)
    rhs = _rhs(prev, t_next, sys, f_loader, k)
    x, report = cg_solve(sys.M + (k * mu) * sys.A, rhs, tol=cfg.linear_tol, x0=v)
    if not report.converged:
        raise SolverError(f"linear solve failed at t={t_next}: {report}")
    return StepResult(field=sys.extend(x), mu=mu, nonlinear_iters=0, linear_report=report)


STEPPERS = {"be": be_step, "mbe": mbe_step}


def run_simulation(
    problem: ProblemSpec,
    mesh: Mesh | FemSystem,
    cfg: SchemeConfig,
    callback: Optional[Callable[[int, StepResult], None]] = None,
) -> tuple[NodalField, list[TimeSeriesRecord]]:
    """March from the interpolant of ``u0`` to ``t_end`` in ``round(t_end/dt)`` steps.

    With ``cfg.diagnostics`` every record carries both sides of the
    ``||U^n|| <= ||U^0|| + 2k sum ||f^m||`` bound and of the gradient-energy
    inequality; violations are logged.
    """
    sys = mesh if isinstance(mesh, FemSystem) else assemble(mesh)
    step = STEPPERS[cfg.kind]
    k = cfg.dt
    loader = make_loader(problem.f, sys)

    U = interpolate(problem.u0, sys.mesh)
    v = sys.restrict(U)
    u0_norm = math.sqrt(sys.M.quadratic_form(v))
    energy_prev = sys.A.quadratic_form(v)
    forcing_sum = 0.0
    lap = None
    series: list[TimeSeriesRecord] = []
    for n in range(1, cfg.n_steps + 1):
        t = n * k
        result = step(U, t, sys, loader, cfg)
        U = result.field
        v = sys.restrict(U)
        if not np.all(np.isfinite(v)):
            raise SimulationError(f"non-finite solution at step {n} (t={t})")
        l2 = math.sqrt(max(sys.M.quadratic_form(v), 0.0))
        energy = sys.A.quadratic_form(v)
        rec = dict(t=t, l2_norm=l2, h1_seminorm=math.sqrt(max(energy, 0.0)), mu=result.mu)
        if cfg.diagnostics:
            f_norm = function_l2_norm(problem.f, t, sys)
            forcing_sum += f_norm
            lap, _ = _discrete_laplacian_interior(v, sys, x0=lap)
            lap_sq = sys.M.quadratic_form(lap)
            grad_lhs = (energy - energy_prev) / k + (1.0 + energy) * lap_sq
            rec.update(
                f_norm=f_norm,
                laplacian_norm=math.sqrt(max(lap_sq, 0.0)),
                stability_lhs=l2,
                stability_rhs=u0_norm + 2 * k * forcing_sum,
                gradient_lhs=grad_lhs,
                gradient_rhs=f_norm**2,
                gradient_scale=max(f_norm**2, (1.0 + energy) * lap_sq, (energy + energy_prev) / k),
            )
        series.append(TimeSeriesRecord(**rec))
        energy_prev = energy
        if callback is not None:
            callback(n, result)

    if cfg.diagnostics:
        report = check_stability(series, u0_norm, [r.f_norm for r in series], k, scheme=cfg.kind)
        if not report.ok:
            logger.warning("%s", report.message)
    return U, series


@dataclass(frozen=True)
class StabilityReport:
    ok: bool
    stability_ok: bool
    gradient_ok: bool
    first_violation: Optional[int]
    message: str
    worst_stability_slack: float
    worst_gradient_slack: float


def check_stability(
    series: list[TimeSeriesRecord],
    u0_norm: float,
    f_norms,
    k: float,
    scheme: str = "be",
    rtol: float = 1e-9,
) -> StabilityReport:
    """Check the discrete a priori bounds at every recorded step.

    Steps are numbered from 1. The gradient-energy inequality counts
    towards ``ok`` only for the fully implicit scheme; for the modified
    scheme it is evaluated and reported.
    """
    f_norms = np.asarray(f_norms, dtype=float)
    if len(f_norms) != len(series):
        raise ValueError("need one forcing norm per record")
    rhs = u0_norm + 2 * k * np.cumsum(f_norms)
    first_stab = first_grad = None
    worst_stab = worst_grad = math.inf
    for n, (rec, bound) in enumerate(zip(series, rhs), start=1):
        slack = bound - rec.l2_norm
        worst_stab = min(worst_stab, slack / max(bound, rec.l2_norm, 1e-300))
        if slack < -rtol * max(bound, rec.l2_norm) and first_stab is None:
            first_stab = n
        gslack = rec.gradient_ineq_residual
        worst_grad = min(worst_grad, gslack / max(rec.gradient_scale, 1e-300))
        if gslack < -rtol * rec.gradient_scale and first_grad is None:
            first_grad = n

    stability_ok = first_stab is None
    gradient_ok = first_grad is None
    enforce_grad = _ALIASES.get(scheme, scheme) == "be"
    ok = stability_ok and (gradient_ok or not enforce_grad)
    parts = []
    if not stability_ok:
        parts.append(f"L2 stability bound violated first at step {first_stab}")
    if not gradient_ok:
        qualifier = "" if enforce_grad else " (monitored only for the modified scheme)"
        parts.append(f"gradient-energy inequality violated first at step {first_grad}{qualifier}")
    first = min((s for s in (first_stab, first_grad if enforce_grad else None) if s), default=None)
    return StabilityReport(
        ok=ok,
        stability_ok=stability_ok,
        gradient_ok=gradient_ok,
        first_violation=first,
        message="; ".join(parts) or "all inequalities hold",
        worst_stability_slack=float(worst_stab) if series else 0.0,
        worst_gradient_slack=float(worst_grad) if series else 0.0,
    )


def max_time_step(alpha: float, lambda1: float) -> float:
    """Largest ``k0`` with ``1 + lambda1 k / 2 > exp(alpha k)`` for all ``0 < k < k0``.

    Requires ``0 < alpha < lambda1 / 2``.
    """
    if not 0 < alpha < lambda1 / 2:
        raise ValueError("need 0 < alpha < lambda1 / 2")

    def gap(k):
        return 1 + 0.5 * lambda1 * k - math.exp(alpha * k)

    upper = 1.0 / alpha
    while gap(upper) > 0:
        upper *= 2
    return brentq(gap, 1e-12 / lambda1, upper, xtol=1e-14, rtol=1e-14)
