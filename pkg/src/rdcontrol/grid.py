"""Cell-centered rectangular grids, fields and the Neumann Laplacian.

Arrays follow one convention throughout the package: a scalar field is an
``(nx, ny)`` array indexed ``[i, j]`` with ``i`` along x, and a multi-species
state stacks species on a leading axis, ``(n, nx, ny)``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid2D",
    "ScalarField",
    "SpeciesState",
    "SolverError",
    "GridMismatchError",
    "laplacian_neumann",
    "HelmholtzSolver",
    "helmholtz_solve",
    "l2_inner",
    "l2_norm",
    "relative_error",
    "set_deterministic",
    "fft_workers",
]

NEG_TOL = 1e-12

_DETERMINISTIC = True


def set_deterministic(flag: bool) -> None:
    """Toggle deterministic mode (single-threaded FFTs, fixed reduction order)."""
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)


def fft_workers() -> int:
    if _DETERMINISTIC:
        return 1
    return int(os.environ.get("RDCTL_THREADS", os.cpu_count() or 1))


class SolverError(RuntimeError):
    """Raised when a linear or time-stepping solve fails."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centered grid. ``ny = 1`` gives a 1-D domain."""

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ValueError(f"cell counts must be positive, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError(f"cell sizes must be positive, got dx={self.dx}, dy={self.dy}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def from_extent(cls, lx: float, ly: float, nx: int, ny: int, origin=(0.0, 0.0)) -> "Grid2D":
        return cls(nx, ny, lx / nx, ly / ny, origin)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.dx, self.ny * self.dy)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates as two ``(nx, ny)`` arrays."""
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def laplacian_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the mirrored 5-point stencil in the DCT-II basis."""
        kx = np.arange(self.nx)
        ky = np.arange(self.ny)
        lx = -4.0 * np.sin(np.pi * kx / (2 * self.nx)) ** 2 / self.dx**2
        ly = -4.0 * np.sin(np.pi * ky / (2 * self.ny)) ** 2 / self.dy**2
        return lx[:, None] + ly[None, :]

    def check(self, values: np.ndarray) -> None:
        if values.shape[-2:] != self.shape:
            raise GridMismatchError(
                f"field shape {values.shape[-2:]} does not match grid {self.shape}")


@dataclass
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains NaN or Inf")

    @classmethod
    def constant(cls, grid: Grid2D, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))


@dataclass
class SpeciesState:
    """Concentrations of all species at one time, shape ``(n, nx, ny)``."""

    grid: Grid2D
    values: np.ndarray
    names: tuple[str, ...] = ()
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("state values must have shape (n, nx, ny)")
        self.grid.check(self.values)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("state contains NaN or Inf")
        if not self.names:
            self.names = tuple(f"s{i}" for i in range(self.n))
        self.names = tuple(self.names)
        if len(self.names) != self.n:
            raise ValueError(f"{len(self.names)} names for {self.n} species")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def field(self, species: int | str) -> ScalarField:
        idx = self.names.index(species) if isinstance(species, str) else species
        return ScalarField(self.grid, self.values[idx])

    def is_nonnegative(self, eps: float = NEG_TOL) -> bool:
        return bool(self.values.min() >= -eps)

    def copy(self) -> "SpeciesState":
        return SpeciesState(self.grid, self.values.copy(), self.names, self.time)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, (ScalarField, SpeciesState)) else np.asarray(f, dtype=np.float64)


def laplacian_neumann(f, grid: Grid2D | None = None) -> np.ndarray:
    """5-point Laplacian with mirrored ghost cells (zero normal flux).

    Works on any array whose trailing two axes are ``(nx, ny)``. Leading axes
    (species, time) are treated independently.
    """
    if grid is None:
        grid = f.grid
    v = _values(f)
    grid.check(v)
    out = np.zeros_like(v)
    if grid.nx > 1:
        d = np.diff(v, axis=-2) / grid.dx**2
        out[..., :-1, :] += d
        out[..., 1:, :] -= d
    if grid.ny > 1:
        d = np.diff(v, axis=-1) / grid.dy**2
        out[..., :, :-1] += d
        out[..., :, 1:] -= d
    return out


class HelmholtzSolver:
    """Direct solver for ``(a I - b Lap_N) x = rhs`` via the DCT-II eigenbasis.

    The mirrored stencil is diagonal in the orthonormal type-II cosine basis,
    so each solve is two real transforms and a pointwise division.
    """

    def __init__(self, grid: Grid2D):
        self.grid = grid
        self.eig = grid.laplacian_eigenvalues()

    def symbol(self, a: float, b: float) -> np.ndarray:
        if not a > 0:
            raise ValueError(f"a must be positive, got {a}")
        if b < 0:
            raise ValueError(f"b must be nonnegative, got {b}")
        return a - b * self.eig

    def solve(self, a: float, b: float, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=np.float64)
        self.grid.check(rhs)
        if b == 0:
            return rhs / a
        return self.solve_symbol(self.symbol(a, b), rhs)

    def solve_symbol(self, symbol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        w = fft_workers()
        r = sfft.dctn(rhs, type=2, norm="ortho", axes=(-2, -1), workers=w)
        r /= symbol
        x = sfft.idctn(r, type=2, norm="ortho", axes=(-2, -1), workers=w)
        if not np.all(np.isfinite(x)):
            raise SolverError("Helmholtz solve produced non-finite values")
        return x

    def apply(self, a: float, b: float, x: np.ndarray) -> np.ndarray:
        return a * x - b * laplacian_neumann(x, self.grid)

    def residual(self, a: float, b: float, x: np.ndarray, rhs: np.ndarray) -> float:
        nr = np.linalg.norm(rhs)
        res = np.linalg.norm(self.apply(a, b, x) - rhs)
        return res / nr if nr > 0 else res


def helmholtz_solve(a: float, b: float, rhs, grid: Grid2D | None = None) -> np.ndarray:
    """Solve ``(a I - b Lap_N) x = rhs``; see :class:`HelmholtzSolver`."""
    if grid is None:
        grid = rhs.grid
    return HelmholtzSolver(grid).solve(a, b, _values(rhs))


def l2_inner(f, g, grid: Grid2D | None = None) -> float:
    """Midpoint-rule inner product over the domain."""
    fv, gv = _values(f), _values(g)
    if fv.shape != gv.shape:
        raise GridMismatchError(f"shape mismatch {fv.shape} vs {gv.shape}")
    if grid is None:
        grid = getattr(f, "grid", None) or g.grid
    if isinstance(f, ScalarField) and isinstance(g, ScalarField) and f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")
    grid.check(fv)
    return float(np.sum(fv * gv) * grid.cell_area)


def l2_norm(f, grid: Grid2D | None = None) -> float:
    return float(np.sqrt(l2_inner(f, f, grid)))


def relative_error(y, y_target, grid: Grid2D | None = None) -> np.ndarray:
    """Per-species ``||y - y_target|| / ||y_target||`` in the discrete L2 norm."""
    yv, tv = _values(y), _values(y_target)
    if yv.shape != tv.shape:
        raise GridMismatchError(f"shape mismatch {yv.shape} vs {tv.shape}")
    if grid is None:
        grid = getattr(y, "grid", None) or y_target.grid
    grid.check(yv)
    num = np.sqrt(np.sum((yv - tv) ** 2, axis=(-2, -1)) * grid.cell_area)
    den = np.sqrt(np.sum(tv**2, axis=(-2, -1)) * grid.cell_area)
    if np.any(den == 0):
        raise ZeroDivisionError("target has zero norm for at least one species")
    return num / den


def stack_fields(fields: Sequence[ScalarField]) -> np.ndarray:
    return np.stack([f.values for f in fields])
