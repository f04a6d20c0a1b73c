"""Box-projected Polak-Ribiere (PR+) nonlinear conjugate gradients."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from .adjoint import ReducedProblem, stationarity_residual
from .forward import ControlField
from .grid import SpeciesState, relative_error

log = logging.getLogger(__name__)


@dataclass
class OptimConfig:
    max_iters: int = 60
    tol_stat: float = 1e-6
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    restart_every: int = 20
    pr_plus: bool = True
    warm_factor: float = 2.0

    def __post_init__(self):
        if not 0 < self.c1 < 1:
            raise ValueError("Armijo constant c1 must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.max_iters < 0 or self.restart_every < 1:
            raise ValueError("max_iters must be >= 0 and restart_every >= 1")


@dataclass
class LineSearchResult:
    ok: bool
    step: float
    control: ControlField
    cost: float
    backtracks: int


@dataclass
class OptimResult:
    control: ControlField
    final_state: SpeciesState
    J_history: list[float]
    stat_history: list[float]
    rel_errors: np.ndarray
    iterations: int
    reason: str
    telemetry: list[dict] = field(default_factory=list)
    gradient: np.ndarray | None = None

    def summary(self) -> dict:
        return {"J": self.J_history[-1], "iterations": self.iterations, "reason": self.reason,
                "rel_errors": {n: float(e) for n, e in zip(self.final_state.names, self.rel_errors)},
                "stationarity": self.stat_history[-1],
                "stationarity_reduction": self.stat_history[0] / self.stat_history[-1]
                if self.stat_history[-1] > 0 else float("inf")}


def project_box(control: ControlField) -> ControlField:
    return control.project()


def pr_beta(g_new: np.ndarray, g_old: np.ndarray, inner: Callable | None = None,
            plus: bool = True) -> float:
    """Polak-Ribiere coefficient, clipped at zero when ``plus``.

    Raises ``ZeroDivisionError`` for a vanishing previous gradient.
    """
    if inner is None:
        inner = lambda a, b: float(np.vdot(a, b))  # noqa: E731
    den = inner(g_old, g_old)
    if den == 0:
        raise ZeroDivisionError("previous gradient vanished")
    beta = inner(g_new, g_new - g_old) / den
    return max(beta, 0.0) if plus else beta


def free_direction(control: ControlField, d: np.ndarray) -> np.ndarray:
    """Zero the components of ``d`` that push against an active bound."""
    u = control.values
    blocked = ((u <= control.lower) & (d < 0)) | ((u >= control.upper) & (d > 0))
    return np.where(blocked, 0.0, d)


def line_search_armijo(control: ControlField, d: np.ndarray, J0: float, slope: float,
                       cost: Callable[[ControlField], float], s0: float, c1: float = 1e-4,
                       factor: float = 0.5, max_backtracks: int = 40) -> LineSearchResult:
    """Backtrack from ``s0`` until ``J(P(u + s d)) <= J0 + c1 s slope``.

    ``slope`` is ``<g, d>`` and must be negative. A trial point that the
    projection maps back onto ``control`` is rejected without evaluating the
    cost; otherwise rounding would accept it once ``c1 s slope`` underflows.
    """
    s = s0
    trial, Jt = control, J0
    for k in range(max_backtracks + 1):
        trial = control.with_values(control.values + s * d).project()
        if np.array_equal(trial.values, control.values):
            s *= factor
            continue
        Jt = cost(trial)
        if Jt <= J0 + c1 * s * slope:
            return LineSearchResult(True, s, trial, Jt, k)
        s *= factor
    return LineSearchResult(False, s, trial, Jt, max_backtracks)


def optimize(problem: ReducedProblem, u0: ControlField, config: OptimConfig | None = None,
             telemetry: TextIO | Callable[[dict], None] | None = None) -> OptimResult:
    """Minimise the reduced cost over the box with projected PR+ conjugate gradients.

    Stops when the projected-gradient residual drops below ``tol_stat`` times its
    initial value, after ``max_iters`` iterations, or after two consecutive line
    search failures.
    """
    cfg = config or OptimConfig()
    u = u0.project()

    def inner(a, b):
        return problem.inner(a, b, u)

    records: list[dict] = []

    def emit(rec):
        records.append(rec)
        if telemetry is None:
            return
        if callable(telemetry):
            telemetry(rec)
        else:
            telemetry.write(json.dumps(rec) + "\n")
            telemetry.flush()

    parts, g, traj, _ = problem.gradient(u)
    J = parts.total
    stat0 = stationarity_residual(u, g, inner)
    J_hist, stat_hist = [J], [stat0]
    emit({"iter": 0, "J": J, "tracking": parts.tracking, "control": parts.control,
          "stationarity": stat0, "grad_inf": float(np.max(np.abs(g))), "step": 0.0, "backtracks": 0,
          "beta": 0.0, "slope": 0.0, "restart": True})
    reason = "max_iters"
    it = 0
    if stat0 == 0.0:
        reason = "stationary"
    else:
        d = free_direction(u, -g)
        s_prev = None
        failures = 0
        since_restart = 0
        while it < cfg.max_iters:
            slope = inner(g, d)
            restart = False
            if slope >= 0 or since_restart >= cfg.restart_every:
                d = free_direction(u, -g)
                slope = inner(g, d)
                restart = True
                since_restart = 0
            if slope >= 0:
                reason = "stationary"
                break
            if s_prev is None:
                s0 = 1.0 / max(np.max(np.abs(d)), np.finfo(float).tiny)
            else:
                s0 = s_prev * cfg.warm_factor
            ls = line_search_armijo(u, d, J, slope, problem.cost, s0, cfg.c1, cfg.backtrack,
                                    cfg.max_backtracks)
            if not ls.ok:
                failures += 1
                log.info("line search failed at iteration %d (restart=%s)", it, restart)
                if failures >= 2:
                    reason = "line_search_failed"
                    break
                d = free_direction(u, -g)
                since_restart = 0
                s_prev = None
                continue
            failures = 0
            it += 1
            since_restart += 1
            u, J, s_prev = ls.control, ls.cost, ls.step
            g_old = g
            parts, g, traj, _ = problem.gradient(u)
            stat = stationarity_residual(u, g, inner)
            J_hist.append(J)
            stat_hist.append(stat)
            try:
                beta = pr_beta(g, g_old, inner, cfg.pr_plus)
            except ZeroDivisionError:
                beta = 0.0
            d = free_direction(u, -g + beta * d)
            emit({"iter": it, "J": J, "tracking": parts.tracking, "control": parts.control,
                  "stationarity": stat, "grad_inf": float(np.max(np.abs(g))), "step": float(ls.step), "backtracks": ls.backtracks, "beta": float(beta),
                  "slope": slope, "restart": restart})
            log.info("iter %d J=%.6e stat=%.3e step=%.3e bt=%d beta=%.3f", it, J, stat, ls.step,
                     ls.backtracks, beta)
            if stat <= cfg.tol_stat * stat0:
                reason = "converged"
                break

    final = problem.simulate(u)
    state = SpeciesState(problem.grid, final.final, problem.model.names, problem.time_grid.T)
    errs = relative_error(final.final, problem.cost_spec.target, problem.grid)
    return OptimResult(u, state, J_hist, stat_hist, errs, it, reason, records, g)


def telemetry_to_jsonl(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


__all__ = ["OptimConfig", "OptimResult", "LineSearchResult", "project_box", "pr_beta",
           "line_search_armijo", "optimize", "free_direction", "telemetry_to_jsonl"]
