"""Path functionals: fluctuation fields, occupation times, the quadratic
field Q^n_s(H) and the relative entropy of the perturbed initial measure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Configuration, ScalingParams, drift_velocity, perturbed_marginals
from .model import site_positions, torus_wrap
from .simulator import PathRecord, _check_support, _occupation, bond_functional
from .testfn import TestFunction

__all__ = [
    "FieldSample",
    "OccupationTrajectory",
    "LocalFunction",
    "fluctuation_field",
    "field_series",
    "occupation_time",
    "ftilde",
    "q_n_observable",
    "q_n_integral",
    "relative_entropy_initial",
]

MAX_WINDOW = 20


@dataclass(frozen=True)
class FieldSample:
    time: float
    value: float


@dataclass
class OccupationTrajectory:
    """Gamma^n_t on a time grid; ``values[0]`` is 0 when the grid starts at 0."""

    grid: np.ndarray
    values: np.ndarray

    def at(self, t) -> float:
        i = int(np.searchsorted(self.grid, t))
        if i >= self.grid.size or not np.isclose(self.grid[i], t):
            raise KeyError(f"time {t} is not on the trajectory grid")
        return float(self.values[i])


class LocalFunction:
    """A cylinder function f(eta) of the sites ``offsets`` (relative to 0).

    ``func`` receives a 0/1 integer array with one entry per offset.  It is
    tabulated once over all 2^w window states, so it may be slow Python.
    """

    def __init__(self, offsets, func, d=1):
        offs = np.asarray(offsets, dtype=np.int64)
        if offs.ndim == 1:
            offs = offs[:, None]
        if offs.shape[1] != d:
            raise ValueError("offset dimension does not match d")
        if offs.shape[0] > MAX_WINDOW:
            raise ValueError(f"window of {offs.shape[0]} sites exceeds the limit {MAX_WINDOW}")
        self.offsets = offs
        self.d = d
        self.func = func
        w = offs.shape[0]
        states = ((np.arange(2 ** w)[:, None] >> np.arange(w)) & 1).astype(np.int64)
        self.table = np.array([float(func(s)) for s in states])

    @property
    def window(self) -> int:
        return self.offsets.shape[0]

    @classmethod
    def occupation(cls, d=1):
        """f(eta) = eta_0."""
        return cls(np.zeros((1, d), dtype=np.int64), lambda e: e[0], d)

    @classmethod
    def constant(cls, c, d=1):
        return cls(np.zeros((0, d), dtype=np.int64), lambda e: c, d)

    def sites(self, params: ScalingParams) -> np.ndarray:
        """Flat lattice indices of the window around the origin."""
        if params.d != self.d:
            raise ValueError("local function dimension does not match params.d")
        if self.window and np.max(np.abs(self.offsets)) * 2 >= params.side:
            raise ValueError("window exceeds the lattice")
        S = params.side
        idx = np.zeros(self.window, dtype=np.int64)
        for a in range(self.d):
            idx = idx * S + np.mod(self.offsets[:, a], S)
        return idx

    def __call__(self, eta) -> float:
        eta = np.asarray(eta, dtype=np.int64)
        return float(self.table[int(np.sum(eta << np.arange(eta.size)))])


def ftilde(f: LocalFunction, rho: float) -> float:
    """E[f] under the Bernoulli(rho) product law, by exact enumeration."""
    if f.window > MAX_WINDOW:
        raise ValueError(f"window of {f.window} sites exceeds the limit {MAX_WINDOW}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    w = f.window
    ones = np.array([bin(k).count("1") for k in range(2 ** w)])
    prob = rho ** ones * (1.0 - rho) ** (w - ones)
    return float(np.dot(prob, f.table))


def _macro_positions(params: ScalingParams, t: float) -> np.ndarray:
    """Wrapped positions (x - v_n t) / n of every site, shape (N,) or (N, d)."""
    pos = site_positions(params).astype(float)
    u = torus_wrap((pos - drift_velocity(params) * t) / params.n, params.L_macro)
    return u[:, 0] if params.d == 1 else u


def _occupancy(config) -> np.ndarray:
    return config.occupancy if isinstance(config, Configuration) else np.asarray(config)


def fluctuation_field(config, H: TestFunction, t: float, params: ScalingParams) -> float:
    """<mu^n_t, H> = (1/a_n) sum_x (eta_x - rho) H(t, (x - v_n t)/n)."""
    if H.is_zero:
        return 0.0
    _check_support(H, params)
    h = H.value(t, _macro_positions(params, t))
    eta = _occupancy(config).astype(float)
    return float(np.dot(eta - params.rho, h) / params.a_n)


def field_series(path: PathRecord, H: TestFunction, grid=None) -> list:
    """Fluctuation field along a path at the times of ``grid``."""
    from .simulator import states_at

    g = path.grid if grid is None else np.asarray(grid, dtype=float)
    snaps = states_at(path, g)
    return [FieldSample(float(t), fluctuation_field(s, H, t, path.params)) for t, s in zip(g, snaps)]


def occupation_time(path: PathRecord, f: LocalFunction | None = None, grid=None,
                    params: ScalingParams | None = None) -> OccupationTrajectory:
    """Gamma^n_t(f) = (n / a_n) int_0^t (f(eta(s)) - ftilde(rho)) ds, exactly.

    The integrand is constant between jumps, so the integral is a finite sum
    over the jump log; ``grid`` only selects where values are reported.
    """
    p = path.params if params is None else params
    if f is None:
        f = LocalFunction.occupation(p.d)
    g = path.grid if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.diff(g) < 0) or g[0] < 0 or g[-1] > p.T:
        raise ValueError("grid must be sorted within [0, T]")
    window = f.sites(p)
    out = np.empty(g.shape[0])
    _occupation(path.initial.occupancy.copy(), path.times, path.sites, path.dirs, p.d, p.side,
                window, f.table, ftilde(f, p.rho), g, out)
    return OccupationTrajectory(g.copy(), out * (p.n / p.a_n))


def _gradients(H, params, s, discrete):
    u = _macro_positions(params, s)
    if not discrete:
        return [H.grad(s, u, axis=a) for a in range(params.d)]
    h = H.value(s, u)
    shape = (params.side,) * params.d
    return [
        params.n * (np.roll(h.reshape(shape), -1, axis=a).reshape(-1) - h)
        for a in range(params.d)
    ]


def q_n_observable(config, H: TestFunction, s: float, params: ScalingParams,
                   discrete: bool = False) -> float:
    """Quadratic field Q^n_s(H).

    (alpha n^(1-beta) / (d a_n)) sum_x sum_i (eta_x - rho)(eta_{x+e_i} - rho) dH_i,
    where dH_i is the partial derivative of H_s at (x - v_n s)/n, or with
    ``discrete=True`` the forward difference n [H(x + e_i) - H(x)].
    """
    p = params
    if p.alpha == 0 or H.is_zero:
        return 0.0
    _check_support(H, p)
    eta = _occupancy(config).astype(float) - p.rho
    shape = (p.side,) * p.d
    total = 0.0
    for a, g in enumerate(_gradients(H, p, s, discrete)):
        nxt = np.roll(eta.reshape(shape), -1, axis=a).reshape(-1)
        total += float(np.dot(eta * nxt, g))
    return p.alpha * p.n ** (1.0 - p.beta) / (p.d * p.a_n) * total


def q_n_integral(path: PathRecord, H: TestFunction, grid=None, discrete: bool = False) -> dict:
    """Time integral of Q^n_s(H) along a path.

    Returns ``values`` (cumulative integral on ``grid``), ``sup`` (largest
    absolute value over the grid) and ``terminal`` (value at the last grid
    time).
    """
    p = path.params
    g = path.grid if grid is None else np.asarray(grid, dtype=float)
    raw, _ = bond_functional(path, H, 2 if discrete else 1, g)
    vals = p.alpha * p.n ** (1.0 - p.beta) / (p.d * p.a_n) * raw
    return {
        "grid": g.copy(),
        "values": vals,
        "sup": float(np.max(np.abs(vals))) if vals.size else 0.0,
        "terminal": float(vals[-1]) if vals.size else 0.0,
    }


def relative_entropy_initial(phi, params: ScalingParams) -> float:
    """Exact H(nu^{n,phi} | nu_rho) of the two product measures."""
    if phi is None:
        return 0.0
    pm = perturbed_marginals(params, phi)
    r = params.rho
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(pm > 0, pm * np.log(pm / r), 0.0)
        b = np.where(pm < 1, (1 - pm) * np.log((1 - pm) / (1 - r)), 0.0)
    return float(np.sum(a + b))


def bernoulli_kl(p: float, rho: float) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(rho)."""
    out = 0.0
    if p > 0:
        out += p * math.log(p / rho)
    if p < 1:
        out += (1 - p) * math.log((1 - p) / (1 - rho))
    return out
