"""Discrete tangent and adjoint sweeps, reduced cost and reduced gradient.

The adjoint is the exact transpose of the linearised time-stepping
recursion, so ``<g, h>`` reproduces the directional derivative of the
discrete cost to roundoff. All inner products carry the cell area and, in
control space, the slab duration.

With ``A_i = (1 + dt g_i/2) - (dt d_i/2) Lap`` and
``B_i = (1 - dt g_i/2) + (dt d_i/2) Lap`` the tangent step reads

    w' = M A^{-1} [B w + dt (alpha (grad H(y) . w) + f'(u) h)]

with ``M`` the clamp mask of the forward step. Its transpose, run backward
from ``p^N = mu (y^N - y_target)``, is

    q   = A^{-1} M p'
    p   = B q + dt grad H(y) sum_i alpha_i q_i
    g  += dt f'(u) q           (control sensitivity of the step)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import ControlField, Stepper, TimeGrid, Trajectory, simulate, DEFAULT_CHECKPOINT_STRIDE
from .grid import Grid2D, SpeciesState
from .model import ModelSpec, eval_f_prime, grad_H


@dataclass
class CostSpec:
    """Terminal tracking plus control regularisation weights and the target."""

    mu: float
    lam: float
    target: np.ndarray

    def __post_init__(self):
        if isinstance(self.target, SpeciesState):
            self.target = self.target.values
        self.target = np.asarray(self.target, dtype=np.float64)
        if not self.mu > 0:
            raise ValueError("tracking weight mu must be positive")
        if self.lam < 0:
            raise ValueError("regularisation weight lam must be nonnegative")


@dataclass
class AdjointTrajectory:
    terminal: np.ndarray
    initial: np.ndarray
    slab_mean: np.ndarray
    sensitivity: np.ndarray
    history: list[np.ndarray] | None = None


@dataclass
class CostParts:
    total: float
    tracking: float
    control: float


def tangent_step(stepper: Stepper, y: np.ndarray, w: np.ndarray, h: np.ndarray, u: np.ndarray,
                 mask: np.ndarray | None = None) -> np.ndarray:
    """Linearisation of one forward step around ``y`` in direction ``(w, h)``."""
    model = stepper.model
    coupling = np.sum(grad_H(model.regulatory, y) * w, axis=0)
    rhs = stepper.explicit(w) + stepper.dt * (stepper.alpha * coupling + eval_f_prime(model.gains, u) * h)
    w_new = stepper.implicit_solve(rhs)
    if mask is not None:
        w_new[mask] = 0.0
    return w_new


def adjoint_step(stepper: Stepper, y: np.ndarray, p_next: np.ndarray, mask: np.ndarray | None = None):
    """Transpose of :func:`tangent_step`; returns ``(p, q)``."""
    if mask is not None:
        p_next = np.where(mask, 0.0, p_next)
    q = stepper.implicit_solve(p_next)
    weighted = np.sum(stepper.alpha * q, axis=0)
    p = stepper.explicit(q) + stepper.dt * grad_H(stepper.model.regulatory, y) * weighted
    return p, q


def tangent_sweep(traj: Trajectory, h: np.ndarray, keep_history: bool = False):
    """Propagate a control direction ``h`` (slab-shaped) to ``w^N``."""
    stepper = traj.stepper
    control = traj.control
    N = traj.time_grid.N
    w = np.zeros_like(traj.checkpoints[0])
    history = [w] if keep_history else None
    k = 0
    while k < N:
        states, masks = traj.window(k)
        for j, (y, mask) in enumerate(zip(states, masks)):
            step = k + j
            w = tangent_step(stepper, y, w, h[step // control.stride], control.slab(step), mask)
            if keep_history:
                history.append(w)
        k += len(states)
    return (w, history) if keep_history else w


def adjoint_sweep(traj: Trajectory, terminal: np.ndarray, keep_history: bool = False) -> AdjointTrajectory:
    """Backward sweep from ``p^N = terminal`` with windowed checkpoint replay.

    ``slab_mean`` holds, per control slab, the time average of ``q`` so that the
    control gradient is ``lam u + sensitivity`` with ``sensitivity = f'(u) slab_mean``.
    """
    stepper = traj.stepper
    control = traj.control
    tg = traj.time_grid
    N = tg.N
    durations = control.durations(tg)
    acc = np.zeros_like(control.values)
    fprime = eval_f_prime(traj.model.gains, np.moveaxis(control.values, 1, 0))
    fprime = np.moveaxis(fprime, 0, 1)
    p = np.asarray(terminal, dtype=np.float64)
    history = [p] if keep_history else None
    k = N - 1
    while k >= 0:
        states, masks = traj.window(k)
        start = (k // traj.stride) * traj.stride
        for j in range(len(states) - 1, -1, -1):
            step = start + j
            p, q = adjoint_step(stepper, states[j], p, masks[j])
            acc[step // control.stride] += tg.dt * q
            if keep_history:
                history.append(p)
        k = start - 1
    if keep_history:
        history.reverse()
    slab_mean = acc / durations[:, None, None, None]
    return AdjointTrajectory(np.asarray(terminal), p, slab_mean, fprime * slab_mean, history)


class ReducedProblem:
    """Control-to-cost map ``j(u) = J(S(u), u)`` with its adjoint gradient.

    Parameters
    ----------
    model, grid : the system and its spatial grid
    y0 : initial state ``(n, nx, ny)``
    time_grid : horizon and step
    cost : :class:`CostSpec`
    checkpoint_stride : forward checkpoint spacing in steps
    """

    def __init__(self, model: ModelSpec, grid: Grid2D, y0, time_grid: TimeGrid, cost: CostSpec,
                 checkpoint_stride: int = DEFAULT_CHECKPOINT_STRIDE):
        if isinstance(y0, SpeciesState):
            y0 = y0.values
        self.model = model
        self.grid = grid
        self.y0 = np.asarray(y0, dtype=np.float64)
        self.time_grid = time_grid
        self.cost_spec = cost
        self.checkpoint_stride = checkpoint_stride
        grid.check(cost.target)
        if cost.target.shape != self.y0.shape:
            raise ValueError("target shape does not match state shape")
        self.n_evals = 0
        self.n_grads = 0

    def inner(self, a: np.ndarray, b: np.ndarray, control: ControlField) -> float:
        """Space-time inner product of two control-shaped arrays."""
        w = control.durations(self.time_grid) * self.grid.cell_area
        return float(np.dot(w, np.sum(a * b, axis=(1, 2, 3))))

    def norm(self, a: np.ndarray, control: ControlField) -> float:
        return float(np.sqrt(self.inner(a, a, control)))

    def simulate(self, control: ControlField, **kw) -> Trajectory:
        return simulate(self.model, self.y0, control, self.time_grid, self.checkpoint_stride,
                        grid=self.grid, **kw)

    def cost_parts(self, control: ControlField, traj: Trajectory | None = None) -> CostParts:
        if traj is None:
            traj = self.simulate(control)
        self.n_evals += 1
        diff = traj.final - self.cost_spec.target
        tracking = 0.5 * self.cost_spec.mu * float(np.sum(diff * diff)) * self.grid.cell_area
        reg = 0.5 * self.cost_spec.lam * self.inner(control.values, control.values, control)
        return CostParts(tracking + reg, tracking, reg)

    def cost(self, control: ControlField) -> float:
        return self.cost_parts(control).total

    def terminal_adjoint(self, traj: Trajectory) -> np.ndarray:
        return self.cost_spec.mu * (traj.final - self.cost_spec.target)

    def gradient(self, control: ControlField, traj: Trajectory | None = None):
        """Returns ``(parts, g, traj, adjoint)`` with ``g`` shaped like the control."""
        if traj is None:
            traj = self.simulate(control)
        parts = self.cost_parts(control, traj)
        adj = adjoint_sweep(traj, self.terminal_adjoint(traj))
        self.n_grads += 1
        g = self.cost_spec.lam * control.values + adj.sensitivity
        return parts, g, traj, adj


def reduced_cost(model, grid, control, y0, cost, time_grid, checkpoint_stride=DEFAULT_CHECKPOINT_STRIDE) -> float:
    return ReducedProblem(model, grid, y0, time_grid, cost, checkpoint_stride).cost(control)


def reduced_gradient(model, grid, control, y0, cost, time_grid,
                     checkpoint_stride=DEFAULT_CHECKPOINT_STRIDE) -> np.ndarray:
    return ReducedProblem(model, grid, y0, time_grid, cost, checkpoint_stride).gradient(control)[1]


def stationarity_residual(control: ControlField, g: np.ndarray, inner=None) -> float:
    """Projected-gradient residual ``|P(u - g) - u| / max(1, |u|)``.

    ``inner`` defaults to the plain Euclidean product; pass
    :meth:`ReducedProblem.inner` bound to a control for the weighted norm.
    """
    u = control.values
    r = np.clip(u - g, control.lower, control.upper) - u
    if inner is None:
        return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(u)))
    return float(np.sqrt(inner(r, r)) / max(1.0, np.sqrt(inner(u, u))))


@dataclass
class GradcheckReport:
    eps: list[float]
    rel_errors: list[list[float]]
    min_errors: list[float]
    duality: list[float] = field(default_factory=list)
    tol: float = 1e-6
    duality_tol: float = 1e-12

    @property
    def passed(self) -> bool:
        ok = all(e <= self.tol for e in self.min_errors)
        return ok and all(d <= self.duality_tol for d in self.duality)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "rel_errors": self.rel_errors, "min_errors": self.min_errors,
                "duality_residuals": self.duality, "tol": self.tol, "duality_tol": self.duality_tol,
                "passed": self.passed}


def duality_residual(traj: Trajectory, h: np.ndarray, seed: np.ndarray) -> float:
    """Relative mismatch of ``<s, w^N>`` and ``<p-sweep(s), h>``."""
    area = traj.grid.cell_area
    w = tangent_sweep(traj, h)
    adj = adjoint_sweep(traj, seed)
    durations = traj.control.durations(traj.time_grid)
    lhs = float(np.sum(seed * w)) * area
    rhs = float(np.dot(durations, np.sum(adj.sensitivity * h, axis=(1, 2, 3)))) * area
    scale = max(abs(lhs), abs(rhs))
    return abs(lhs - rhs) / scale if scale > 0 else 0.0


def gradcheck(problem: ReducedProblem, control: ControlField, n_dirs: int = 5,
              eps=(1e-3, 1e-4, 1e-5, 1e-6), seed: int = 0, tol: float = 1e-6,
              duality_tol: float = 1e-12) -> GradcheckReport:
    """Central finite differences of ``j`` against ``<g, h>`` along random directions."""
    rng = np.random.default_rng(seed)
    _, g, traj, _ = problem.gradient(control)
    rel, mins, dual = [], [], []
    for _ in range(n_dirs):
        h = rng.uniform(-1.0, 1.0, control.values.shape)
        exact = problem.inner(g, h, control)
        row = []
        for e in eps:
            jp = problem.cost(control.with_values(control.values + e * h))
            jm = problem.cost(control.with_values(control.values - e * h))
            row.append(abs((jp - jm) / (2 * e) - exact) / abs(exact))
        rel.append(row)
        mins.append(min(row))
        s = rng.standard_normal(traj.final.shape)
        dual.append(duality_residual(traj, h, s))
    return GradcheckReport(list(eps), rel, mins, dual, tol, duality_tol)
