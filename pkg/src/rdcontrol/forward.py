"""IMEX Crank-Nicolson time stepping with checkpointed trajectories.

Per species ``i`` one step solves

    (1 + dt g_i/2) y' - (dt d_i/2) Lap y' = (1 - dt g_i/2) y + (dt d_i/2) Lap y
                                            + dt (alpha_i H(y) + f_i(u))

and clamps ``y'`` at zero. Diffusion and decay are trapezoidal, production
and control enter explicitly at the start of the step.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import Grid2D, HelmholtzSolver, SolverError, SpeciesState, laplacian_neumann
from .model import ModelSpec, eval_f, eval_H

log = logging.getLogger(__name__)

DEFAULT_CHECKPOINT_STRIDE = 100


@dataclass(frozen=True)
class TimeGrid:
    T: float
    dt: float

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("T and dt must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T={self.T} is not a multiple of dt={self.dt}; use TimeGrid.fit")

    @classmethod
    def fit(cls, T: float, dt: float) -> "TimeGrid":
        """Round ``T`` down to a multiple of ``dt``, warning if it changes."""
        n = math.floor(T / dt + 1e-9)
        if n < 1:
            raise ValueError(f"T={T} is shorter than one step dt={dt}")
        if abs(n * dt - T) > 1e-12 * max(1.0, T):
            warnings.warn(f"T={T} is not a multiple of dt={dt}; using T={n * dt}", stacklevel=2)
        return cls(n * dt, dt)

    @property
    def N(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class ControlField:
    """Piecewise-constant-in-time controls, shape ``(slabs, n, nx, ny)``.

    Each slab spans ``stride`` consecutive time steps (the last one may be
    shorter). Bounds broadcast against the values.
    """

    values: np.ndarray
    stride: int = 1
    lower: np.ndarray | float = 0.0
    upper: np.ndarray | float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4:
            raise ValueError("control values must have shape (slabs, n, nx, ny)")
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if np.any(self.lower > self.upper):
            raise ValueError("bounds reversed: lower bound exceeds upper bound")
        if np.any(self.lower < 0):
            raise ValueError("lower control bound must be nonnegative")

    @staticmethod
    def bound_array(b, n: int) -> np.ndarray:
        """Per-species scalars become shape ``(n, 1, 1)``; arrays pass through."""
        b = np.asarray(b, dtype=np.float64)
        if b.ndim == 1:
            if b.size != n:
                raise ValueError(f"expected {n} per-species bounds, got {b.size}")
            return b[:, None, None]
        return b

    @classmethod
    def zeros(cls, grid: Grid2D, n: int, time_grid: TimeGrid, stride: int = 1,
              lower=0.0, upper=1.0) -> "ControlField":
        slabs = -(-time_grid.N // stride)
        return cls(np.zeros((slabs, n) + grid.shape), stride,
                   cls.bound_array(lower, n), cls.bound_array(upper, n))

    @property
    def n_slabs(self) -> int:
        return self.values.shape[0]

    def slab(self, step: int) -> np.ndarray:
        return self.values[step // self.stride]

    def durations(self, time_grid: TimeGrid) -> np.ndarray:
        """Length in hours of each slab."""
        steps = np.full(self.n_slabs, self.stride, dtype=float)
        steps[-1] = time_grid.N - self.stride * (self.n_slabs - 1)
        return steps * time_grid.dt

    def check_time_grid(self, time_grid: TimeGrid) -> None:
        if self.n_slabs != -(-time_grid.N // self.stride):
            raise ValueError(
                f"control has {self.n_slabs} slabs but {time_grid.N} steps / stride {self.stride}"
                f" needs {-(-time_grid.N // self.stride)}")

    def project(self) -> "ControlField":
        return self.with_values(np.clip(self.values, self.lower, self.upper))

    def with_values(self, values: np.ndarray) -> "ControlField":
        return ControlField(values, self.stride, self.lower, self.upper)

    def within_bounds(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.values >= self.lower - tol) and np.all(self.values <= self.upper + tol))


class Stepper:
    """Precomputed per-species Crank-Nicolson operators for one model, grid and dt."""

    def __init__(self, model: ModelSpec, grid: Grid2D, dt: float):
        self.model, self.grid, self.dt = model, grid, float(dt)
        self.solver = HelmholtzSolver(grid)
        gam, dif = model.degradation, model.diffusion
        self.a = 1.0 + 0.5 * dt * gam
        self.b = 0.5 * dt * dif
        self.c = 1.0 - 0.5 * dt * gam
        self.symbols = np.stack([self.solver.symbol(a, b) for a, b in zip(self.a, self.b)])
        self.alpha = model.alpha_field()
        if model.alpha.ndim == 3:
            grid.check(self.alpha)

    def explicit(self, x: np.ndarray) -> np.ndarray:
        """``(1 - dt g/2) x + (dt d/2) Lap x`` per species."""
        return self.c[:, None, None] * x + self.b[:, None, None] * laplacian_neumann(x, self.grid)

    def implicit_solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.solver.solve_symbol(self.symbols, rhs)

    def raw(self, y: np.ndarray, u: np.ndarray, step_index: int | None = None) -> np.ndarray:
        """Unclamped update."""
        src = self.alpha * eval_H(self.model.regulatory, y) + eval_f(self.model.gains, u)
        rhs = self.explicit(y) + self.dt * src
        try:
            z = self.implicit_solve(rhs)
        except SolverError as exc:
            exc.step = step_index
            raise
        if not np.all(np.isfinite(z)):
            raise SolverError(f"non-finite state at step {step_index}", step=step_index)
        return z

    @staticmethod
    def clamp(z: np.ndarray):
        neg = z < 0
        if neg.any():
            return np.where(neg, 0.0, z), neg
        return z, None

    def step(self, y: np.ndarray, u: np.ndarray, step_index: int | None = None):
        """Advance one step; returns ``(y_new, clamp_mask)`` where the mask marks
        cells whose pre-clamp value was negative (``None`` if there were none)."""
        return self.clamp(self.raw(y, u, step_index))


def step_imex_cn(model: ModelSpec, y, u, dt: float, grid: Grid2D | None = None) -> np.ndarray:
    """One IMEX Crank-Nicolson step for a state ``y`` of shape ``(n, nx, ny)``."""
    if isinstance(y, SpeciesState):
        grid, y = y.grid, y.values
    if grid is None:
        raise ValueError("grid is required when y is a bare array")
    return Stepper(model, grid, dt).step(np.asarray(y, dtype=float), np.asarray(u, dtype=float))[0]


@dataclass
class Trajectory:
    """Forward solution with checkpoints every ``stride`` steps.

    Intermediate states are recomputed on demand with the same stepper that
    produced the checkpoints, so replays are bit-identical.
    """

    model: ModelSpec
    grid: Grid2D
    time_grid: TimeGrid
    control: ControlField
    stride: int
    checkpoints: dict[int, np.ndarray]
    clamp_count: np.ndarray
    clamp_mass: np.ndarray
    total_mass: np.ndarray
    monitor_bound: np.ndarray
    violations: list[dict] = field(default_factory=list)
    names: tuple[str, ...] = ()
    archive_f32: bool = False
    _stepper: Stepper | None = field(default=None, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.checkpoints[self.time_grid.N]

    def final_state(self) -> SpeciesState:
        return SpeciesState(self.grid, self.final, self.names or self.model.names, self.time_grid.T)

    @property
    def stepper(self) -> Stepper:
        if self._stepper is None:
            self._stepper = Stepper(self.model, self.grid, self.time_grid.dt)
        return self._stepper

    def window(self, k: int) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
        """States ``y^s .. y^{e-1}`` and clamp masks of steps ``s .. e-1`` for the
        checkpoint window containing step ``k``."""
        if self.archive_f32:
            raise ValueError("float32 archives cannot be replayed for adjoint sweeps")
        s = (k // self.stride) * self.stride
        e = min(s + self.stride, self.time_grid.N)
        if s not in self.checkpoints:
            raise KeyError(f"missing checkpoint at step {s}")
        y = self.checkpoints[s]
        states, masks = [], []
        for j in range(s, e):
            states.append(y)
            y, mask = self.stepper.step(y, self.control.slab(j), j)
            masks.append(mask)
        return states, masks

    def state_at(self, k: int) -> np.ndarray:
        if k in self.checkpoints:
            return self.checkpoints[k]
        states, _ = self.window(k)
        return states[k - (k // self.stride) * self.stride]


def linf_monitor_bound(model: ModelSpec, y0: np.ndarray, control: ControlField) -> np.ndarray:
    """Per-species a-priori sup bound ``|y0_i| + (|alpha_i| + max f_i(u_i)) / gamma_i``."""
    fmax = eval_f(model.gains, np.moveaxis(control.values, 1, 0)).reshape(model.n, -1).max(axis=1)
    y0max = np.abs(y0).reshape(model.n, -1).max(axis=1)
    return y0max + (model.alpha_max() + np.maximum(fmax, 0.0)) / model.degradation


def simulate(model: ModelSpec, y0, control: ControlField, time_grid: TimeGrid,
             checkpoint_stride: int = DEFAULT_CHECKPOINT_STRIDE, grid: Grid2D | None = None,
             monitor_tol: float = 1e-9, callback=None) -> Trajectory:
    """Run the forward sweep and return a checkpointed :class:`Trajectory`.

    The sup-norm of each species is compared against :func:`linf_monitor_bound`
    after every step; excursions are recorded and warned about, not fatal.
    ``callback(k, y)`` is called after each step if given.
    """
    names = model.names
    if isinstance(y0, SpeciesState):
        grid, names = y0.grid, y0.names
        y0 = y0.values
    if grid is None:
        raise ValueError("grid is required when y0 is a bare array")
    y = np.asarray(y0, dtype=np.float64)
    if y.shape != (model.n,) + grid.shape:
        raise ValueError(f"initial state shape {y.shape} does not match model/grid")
    if np.any(y < 0):
        raise ValueError("initial state must be nonnegative")
    if not control.within_bounds(1e-12):
        raise ValueError("control outside its bounds")
    control.check_time_grid(time_grid)
    checkpoint_stride = max(1, int(checkpoint_stride))

    stepper = Stepper(model, grid, time_grid.dt)
    N = time_grid.N
    bound = linf_monitor_bound(model, y, control)
    limit = bound * (1 + monitor_tol) + monitor_tol
    checkpoints = {0: y}
    clamp_count = np.zeros(N, dtype=np.int64)
    clamp_mass = np.zeros(N)
    total_mass = np.zeros(N)
    violations: list[dict] = []
    area = grid.cell_area
    for k in range(N):
        raw = stepper.raw(y, control.slab(k), k)
        z, mask = stepper.clamp(raw)
        if mask is not None:
            clamp_count[k] = int(mask.sum())
            clamp_mass[k] = float(-raw[mask].sum() * area)
        y = z
        total_mass[k] = float(y.sum() * area)
        peaks = y.reshape(model.n, -1).max(axis=1)
        over = np.nonzero(peaks > limit)[0]
        for i in over:
            flat = int(np.argmax(y[i]))
            violations.append({"step": k + 1, "species": names[i], "cell": list(np.unravel_index(flat, grid.shape)),
                               "value": float(peaks[i]), "bound": float(bound[i])})
        if (k + 1) % checkpoint_stride == 0 or k + 1 == N:
            checkpoints[k + 1] = y
        if callback is not None:
            callback(k + 1, y)
    if violations:
        warnings.warn(f"L-infinity monitor exceeded {len(violations)} times; first: {violations[0]}",
                      stacklevel=2)
    return Trajectory(model, grid, time_grid, control, checkpoint_stride, checkpoints,
                      clamp_count, clamp_mass, total_mass, bound, violations, tuple(names),
                      _stepper=stepper)


def make_initial_condition(grid: Grid2D, seed: int, low: float = 10.0, high: float = 100.0,
                           blob_scale: float = 30.0, n: int = 2, passes: int = 2,
                           names: tuple[str, ...] = ()) -> SpeciesState:
    """Random two-level field: blurred white noise thresholded at its median.

    Each species uses its own child seed of ``seed``.
    """
    if low > high:
        raise ValueError("low must not exceed high")
    if blob_scale < min(grid.dx, grid.dy):
        raise ValueError("blob_scale must be at least one cell")
    children = np.random.SeedSequence(seed).spawn(n)
    sigma = (blob_scale / grid.dx, blob_scale / grid.dy)
    out = np.empty((n,) + grid.shape)
    for i, ss in enumerate(children):
        noise = np.random.default_rng(ss).standard_normal(grid.shape)
        for _ in range(passes):
            noise = gaussian_filter(noise, sigma, mode="reflect")
        out[i] = np.where(noise > np.median(noise), high, low)
    return SpeciesState(grid, out, names, 0.0)


@dataclass
class TargetResult:
    state: SpeciesState
    steadiness: float
    trajectory: Trajectory


def steadiness_residual(y_end: np.ndarray, y_before: np.ndarray, delta: float) -> float:
    """``|y(T) - y(T - delta)| / (delta |y(T)|)`` in 1/h."""
    return float(np.linalg.norm(y_end - y_before) / (delta * np.linalg.norm(y_end)))


def make_target(model: ModelSpec, y0: SpeciesState, time_grid: TimeGrid,
                checkpoint_stride: int = DEFAULT_CHECKPOINT_STRIDE) -> TargetResult:
    """Uncontrolled run from ``y0``; the end state serves as a tracking target."""
    control = ControlField.zeros(y0.grid, model.n, time_grid, stride=time_grid.N, upper=0.0)
    lag = min(10, time_grid.N)
    keep = {}

    def grab(k, y):
        if k == time_grid.N - lag:
            keep["y"] = y

    traj = simulate(model, y0, control, time_grid, checkpoint_stride, callback=grab)
    before = keep.get("y", y0.values)
    res = steadiness_residual(traj.final, before, lag * time_grid.dt)
    log.info("target steadiness residual %.3e 1/h", res)
    return TargetResult(traj.final_state(), res, traj)


def make_target_preset(alpha_n: float, alpha_l: float, seed: int, T_pattern: float,
                       grid: Grid2D, dt: float = 0.5, **ic_kwargs) -> TargetResult:
    """Nodal-Lefty pattern for production rates ``(alpha_n, alpha_l)`` (per minute)."""
    from .model import nodal_lefty_preset

    model = nodal_lefty_preset(alpha_n, alpha_l)
    y0 = make_initial_condition(grid, seed, n=2, names=model.names, **ic_kwargs)
    return make_target(model, y0, TimeGrid.fit(T_pattern, dt))
