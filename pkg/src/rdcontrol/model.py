"""Reaction terms of the controlled system: regulatory function, input gains, presets.

The regulatory function is the activator/inhibitor ratio

    H(y) = A(y) / (A(y) + B(y)),
    A(y) = (sum_{i in act} w_i y_i**n_i) ** m,
    B(y) = K**m * (1 + sum_{j in inh} (y_j / K_j)**n_j) ** m.

Internally it is evaluated through ``r = S_act / (K (1 + S_inh))`` so that
``H = r**m / (1 + r**m)``, which avoids forming large powers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MINUTES_PER_HOUR = 60.0


class DomainError(ValueError):
    """Negative concentration or control handed to a reaction term."""


@dataclass(frozen=True)
class Activator:
    index: int
    weight: float = 1.0
    hill: float = 1.0


@dataclass(frozen=True)
class Inhibitor:
    index: int
    constant: float
    hill: float = 1.0


@dataclass(frozen=True)
class RegulatorySpec:
    activators: tuple[Activator, ...]
    inhibitors: tuple[Inhibitor, ...]
    K: float
    m: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "activators", tuple(self.activators))
        object.__setattr__(self, "inhibitors", tuple(self.inhibitors))
        if not self.activators:
            raise ValueError("at least one activator is required")
        act = {a.index for a in self.activators}
        inh = {b.index for b in self.inhibitors}
        if len(act) != len(self.activators) or len(inh) != len(self.inhibitors):
            raise ValueError("duplicate species index in regulatory spec")
        if act & inh:
            raise ValueError(f"species {sorted(act & inh)} are both activator and inhibitor")
        if self.K <= 0 or self.m < 1:
            raise ValueError("need K > 0 and m >= 1")
        for a in self.activators:
            if a.weight <= 0 or a.hill < 1:
                raise ValueError(f"activator {a.index}: need weight > 0 and hill >= 1")
        for b in self.inhibitors:
            if b.constant <= 0 or b.hill < 1:
                raise ValueError(f"inhibitor {b.index}: need constant > 0 and hill >= 1")

    def max_index(self) -> int:
        return max(s.index for s in (*self.activators, *self.inhibitors))


def _check_nonneg(y: np.ndarray) -> None:
    if np.any(y < 0):
        raise DomainError("regulatory function is defined for nonnegative concentrations only")


def _parts(reg: RegulatorySpec, y: np.ndarray):
    with np.errstate(over="ignore"):  # huge inputs saturate H at 0 or 1
        s_act = sum(a.weight * y[a.index] ** a.hill for a in reg.activators)
        s_inh = sum((y[b.index] / b.constant) ** b.hill for b in reg.inhibitors)
    s_act = np.asarray(s_act, dtype=np.float64)
    denom = reg.K * (1.0 + np.asarray(s_inh, dtype=np.float64))
    return s_act, denom, s_act / denom


def _ratio_to_h(r: np.ndarray, m: float) -> np.ndarray:
    with np.errstate(over="ignore", divide="ignore"):
        big = r > 1.0
        rm = np.where(big, 0.0, r) ** m
        inv = np.where(big, r, 1.0) ** (-m)
    return np.where(big, 1.0 / (1.0 + inv), rm / (1.0 + rm))


def eval_H(reg: RegulatorySpec, y) -> np.ndarray | float:
    """Evaluate H on ``y`` of shape ``(n, ...)``; returns shape ``(...)``."""
    y = np.asarray(y, dtype=np.float64)
    _check_nonneg(y)
    _, _, r = _parts(reg, y)
    h = _ratio_to_h(r, reg.m)
    return float(h) if h.ndim == 0 else h


def grad_H(reg: RegulatorySpec, y) -> np.ndarray:
    """Analytic gradient of H, shape ``(n, ...)`` matching ``y``."""
    y = np.asarray(y, dtype=np.float64)
    _check_nonneg(y)
    s_act, denom, r = _parts(reg, y)
    h = _ratio_to_h(r, reg.m)
    # dH/dr = m r^(m-1) / (1 + r^m)^2 = m H (1 - H) / r for r > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        dh_dr = np.where(r > 0, reg.m * h * (1.0 - h) / np.where(r > 0, r, 1.0),
                         reg.m * 0.0 ** (reg.m - 1.0))
    g = np.zeros_like(y)
    for a in reg.activators:
        # 0**0 == 1 in numpy, which covers hill == 1 at zero concentration
        g[a.index] = dh_dr * a.weight * a.hill * y[a.index] ** (a.hill - 1.0) / denom
    for b in reg.inhibitors:
        dden = reg.K * b.hill * (y[b.index] / b.constant) ** (b.hill - 1.0) / b.constant
        g[b.index] = -dh_dr * s_act * dden / denom**2
    return g


@dataclass(frozen=True)
class InputGainSpec:
    """Per-species polynomial gains ``f_i(u) = sum_k c[i][k] u**k``."""

    coeffs: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(tuple(float(c) for c in cs) for cs in self.coeffs))
        if any(len(cs) == 0 for cs in self.coeffs):
            raise ValueError("each species needs at least one gain coefficient")

    @classmethod
    def linear(cls, betas: Sequence[float]) -> "InputGainSpec":
        return cls(tuple((0.0, float(b)) for b in betas))

    @property
    def n(self) -> int:
        return len(self.coeffs)

    @property
    def degree(self) -> int:
        return max(len(cs) - 1 for cs in self.coeffs)

    def is_linear(self) -> bool:
        return all(len(cs) <= 2 and cs[0] == 0.0 for cs in self.coeffs)

    def check_nonnegative(self, lower, upper, samples: int = 1024) -> None:
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.n,))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (self.n,))
        for i, cs in enumerate(self.coeffs):
            u = np.linspace(lower[i], upper[i], samples)
            if np.any(np.polynomial.polynomial.polyval(u, cs) < 0):
                raise ValueError(f"gain for species {i} is negative on [{lower[i]}, {upper[i]}]")


def eval_f(gains: InputGainSpec, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    for i, cs in enumerate(gains.coeffs):
        out[i] = np.polynomial.polynomial.polyval(u[i], cs)
    return out


def eval_f_prime(gains: InputGainSpec, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    out = np.empty_like(u)
    for i, cs in enumerate(gains.coeffs):
        dcs = np.polynomial.polynomial.polyder(cs) if len(cs) > 1 else (0.0,)
        out[i] = np.polynomial.polynomial.polyval(u[i], dcs)
    return out


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full description of an n-species controlled reaction-diffusion system.

    Units: hours, micrometres, nM. ``alpha`` is either one scalar per species
    or an ``(n, nx, ny)`` array of spatially varying production rates.
    """

    diffusion: np.ndarray
    degradation: np.ndarray
    alpha: np.ndarray
    regulatory: RegulatorySpec
    gains: InputGainSpec
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        d = np.asarray(self.diffusion, dtype=np.float64).ravel()
        g = np.asarray(self.degradation, dtype=np.float64).ravel()
        a = np.asarray(self.alpha, dtype=np.float64)
        n = d.size
        if g.size != n or a.shape[0] != n or self.gains.n != n:
            raise ValueError("species count mismatch between diffusion, degradation, alpha and gains")
        if a.ndim not in (1, 3):
            raise ValueError("alpha must be shape (n,) or (n, nx, ny)")
        if np.any(d <= 0) or np.any(g <= 0):
            raise ValueError("diffusion and degradation must be strictly positive")
        if np.any(a < 0):
            raise ValueError("production rates alpha must be nonnegative")
        if self.regulatory.max_index() >= n:
            raise ValueError("regulatory spec references a species outside the model")
        names = tuple(self.names) or tuple(f"s{i}" for i in range(n))
        if len(names) != n:
            raise ValueError("names length does not match species count")
        for arr in (d, g, a):
            arr.setflags(write=False)
        object.__setattr__(self, "diffusion", d)
        object.__setattr__(self, "degradation", g)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.diffusion.size

    def alpha_field(self) -> np.ndarray:
        """alpha broadcastable against ``(n, nx, ny)``."""
        return self.alpha if self.alpha.ndim == 3 else self.alpha[:, None, None]

    def alpha_max(self) -> np.ndarray:
        return self.alpha.reshape(self.n, -1).max(axis=1)

    def with_alpha(self, alpha) -> "ModelSpec":
        return ModelSpec(self.diffusion, self.degradation, alpha, self.regulatory, self.gains, self.names)

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.diffusion, self.degradation, self.alpha):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.regulatory, self.gains, self.names)).encode())
        return h.hexdigest()[:16]


def reaction_source(model: ModelSpec, y, u, alpha=None) -> np.ndarray:
    """Non-diffusive right-hand side ``alpha H(y) - gamma y + f(u)``.

    Works cell-wise on ``(n,)`` vectors or on whole ``(n, nx, ny)`` states.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(np.asarray(u) < 0):
        raise DomainError("controls must be nonnegative")
    if alpha is None:
        alpha = model.alpha if y.ndim == 1 else model.alpha_field()
    alpha = np.asarray(alpha, dtype=np.float64)
    gam = model.degradation.reshape((-1,) + (1,) * (y.ndim - 1))
    return alpha * eval_H(model.regulatory, y) - gam * y + eval_f(model.gains, u)


# Nodal-Lefty constants, per minute as published for the mammalian-cell system.
NODAL_LEFTY = {
    "D_n": 1.96,        # um^2 / min
    "D_l": 56.39,
    "gamma_n": 2.37e-3,  # 1 / min
    "gamma_l": 5.65e-3,
    "n_n": 2.63,
    "n_l": 1.09,
    "k_n": 9.28,        # nM
    "k_l": 14.96,
    "beta_n": 0.8,      # nM / min per unit control
    "beta_l": 4.0,
}


def nodal_lefty_H(y_n, y_l, p=NODAL_LEFTY):
    """Closed-form Nodal-Lefty regulation, kept as an independent reference."""
    num = np.asarray(y_n, dtype=float) ** p["n_n"]
    return num / (num + (p["k_n"] * (1.0 + (np.asarray(y_l, dtype=float) / p["k_l"]) ** p["n_l"])) ** p["n_n"])


def nodal_lefty_preset(alpha_n: float, alpha_l: float, beta_n: float | None = None,
                       beta_l: float | None = None) -> ModelSpec:
    """Two-species Nodal (activator) / Lefty (inhibitor) model.

    Rates are given per minute and converted to per hour. The closed-form
    regulation maps onto the general form with one activator of Hill exponent
    1, cooperativity ``m = n_n`` and ``K = k_n``.
    """
    if alpha_n < 0 or alpha_l < 0:
        raise ValueError("production rates must be nonnegative")
    p = NODAL_LEFTY
    beta_n = p["beta_n"] if beta_n is None else beta_n
    beta_l = p["beta_l"] if beta_l is None else beta_l
    c = MINUTES_PER_HOUR
    reg = RegulatorySpec(
        activators=(Activator(0, 1.0, 1.0),),
        inhibitors=(Inhibitor(1, p["k_l"], p["n_l"]),),
        K=p["k_n"],
        m=p["n_n"],
    )
    return ModelSpec(
        diffusion=np.array([p["D_n"], p["D_l"]]) * c,
        degradation=np.array([p["gamma_n"], p["gamma_l"]]) * c,
        alpha=np.array([alpha_n, alpha_l], dtype=float) * c,
        regulatory=reg,
        gains=InputGainSpec.linear([beta_n * c, beta_l * c]),
        names=("nodal", "lefty"),
    )
