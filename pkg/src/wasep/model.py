"""Model constants, lattice state and initial-measure samplers.

The infinite lattice is replaced by a periodic torus with ``L_macro * n``
sites per axis.  Sites are stored flattened in C order; the site with all
coordinates equal to zero plays the role of the origin, and coordinates
``>= side // 2`` are read as negative (centred torus).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ScalingParams",
    "Configuration",
    "AssumptionReport",
    "a_n",
    "validate_assumption",
    "chi",
    "drift_velocity",
    "sample_bernoulli",
    "sample_perturbed",
    "site_positions",
    "replica_seed",
    "MarginalError",
]


class MarginalError(ValueError):
    """A perturbed Bernoulli marginal left the unit interval."""

    def __init__(self, site, value):
        self.site = site
        self.value = value
        super().__init__(f"marginal {value:.6g} at site {site} is outside [0, 1]")


@dataclass(frozen=True)
class ScalingParams:
    n: int
    d: int = 1
    alpha: float = 0.0
    beta: float = 1.0
    rho: float = 0.5
    theta: float = 0.75
    T: float = 1.0
    L_macro: int = 4

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.T <= 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if int(self.L_macro) != self.L_macro or self.L_macro < 1:
            raise ValueError(f"L_macro must be a positive integer, got {self.L_macro}")

    @property
    def side(self) -> int:
        """Lattice sites per axis."""
        return int(self.L_macro * self.n)

    @property
    def num_sites(self) -> int:
        return self.side ** self.d

    @property
    def a_n(self) -> float:
        return a_n(self)

    @property
    def tilt_scale(self) -> float:
        """a_n / n^d, the per-particle weight of H in the tilted rates."""
        return self.a_n / self.n ** self.d

    @property
    def speed(self) -> float:
        """Decay rate a_n^2 / n^d."""
        return self.a_n ** 2 / self.n ** self.d

    @property
    def rate_plus(self) -> float:
        """Macroscopic rate of an attempted jump x -> x + e_i."""
        return self.n ** 2 * (1.0 / (2 * self.d) + self.alpha * self.n ** (-self.beta) / self.d)

    @property
    def rate_minus(self) -> float:
        """Macroscopic rate of an attempted jump x -> x - e_i."""
        return self.n ** 2 / (2 * self.d)

    def with_(self, **changes) -> "ScalingParams":
        return replace(self, **changes)


def a_n(params: ScalingParams) -> float:
    """Moderate-deviation scale ``n ** theta``."""
    return float(params.n) ** params.theta


def chi(rho):
    """Static compressibility rho (1 - rho)."""
    r = np.asarray(rho, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    out = r * (1.0 - r)
    return float(out) if out.ndim == 0 else out


def drift_velocity(params: ScalingParams) -> float:
    """Microscopic frame velocity v_n = alpha (1 - 2 rho) n^(2 - beta) / d."""
    p = params
    return p.alpha * (1.0 - 2.0 * p.rho) * float(p.n) ** (2.0 - p.beta) / p.d


@dataclass(frozen=True)
class AssumptionReport:
    d: int
    beta: float
    theta: float
    checks: dict = field(default_factory=dict)
    notes: tuple = ()

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def failures(self) -> list:
        return [k for k, v in self.checks.items() if not v]

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "beta": self.beta,
            "theta": self.theta,
            "ok": self.ok,
            "checks": dict(self.checks),
            "notes": list(self.notes),
        }


def validate_assumption(params: ScalingParams) -> AssumptionReport:
    """Check the growth window for a_n = n^theta at the level of exponents.

    Every asymptotic relation ``f << g`` between powers of ``n`` becomes a
    strict inequality between exponents.  Logarithmic factors are dropped.
    """
    d, b, th = params.d, params.beta, params.theta
    checks = {
        "theta>d/2": th > d / 2,
        "theta<d": th < d,
        "theta<d+beta-1": th < d + b - 1,
    }
    notes = []
    if d == 1:
        checks["beta>2/3"] = b > 2.0 / 3.0
        checks["theta>1-beta/2"] = th > 1.0 - b / 2.0
    elif d == 2:
        checks["beta>1/2"] = b > 0.5
        checks["theta>2-beta"] = th > 2.0 - b
        notes.append("d=2: (log n)^(1/(1-eps0)) factor checked at exponent level only")
    else:
        checks["beta>1/2"] = b > 0.5
        checks["theta>d-beta"] = th > d - b
    notes.append("lower bound n^(d/2) sqrt(log n) checked at exponent level only")
    return AssumptionReport(d=d, beta=b, theta=th, checks=checks, notes=tuple(notes))


def replica_seed(seed: int, replica: int = 0) -> int:
    """Seed of replica ``replica`` in a run seeded with ``seed``.

    Derived from the pair alone, so it does not depend on scheduling order.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replica)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def site_positions(params: ScalingParams) -> np.ndarray:
    """Integer coordinates of every site, shape (num_sites, d), centred on the origin."""
    side = params.side
    idx = np.indices((side,) * params.d).reshape(params.d, -1).T
    return np.where(idx >= side // 2, idx - side, idx)


@dataclass
class Configuration:
    """Occupancy vector on the torus with a cached particle count."""

    occupancy: np.ndarray
    d: int
    side: int
    particle_count: int = -1

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=np.int8)
        if occ.ndim != 1 or occ.size != self.side ** self.d:
            raise ValueError(
                f"occupancy must be flat with {self.side ** self.d} sites, got shape {occ.shape}"
            )
        if np.any((occ != 0) & (occ != 1)):
            raise ValueError("occupancy values must be 0 or 1")
        self.occupancy = occ
        count = int(occ.sum())
        if self.particle_count >= 0 and self.particle_count != count:
            raise ValueError("particle_count does not match occupancy")
        self.particle_count = count

    @classmethod
    def from_array(cls, occupancy, params: ScalingParams) -> "Configuration":
        return cls(np.asarray(occupancy).reshape(-1), params.d, params.side)

    def copy(self) -> "Configuration":
        return Configuration(self.occupancy.copy(), self.d, self.side, self.particle_count)

    def matches(self, params: ScalingParams) -> bool:
        return self.d == params.d and self.side == params.side

    def grid(self) -> np.ndarray:
        return self.occupancy.reshape((self.side,) * self.d)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.d == other.d
            and self.side == other.side
            and np.array_equal(self.occupancy, other.occupancy)
        )


def sample_bernoulli(params: ScalingParams, seed: int, rho=None) -> Configuration:
    """Draw from the Bernoulli(rho) product measure.

    ``rho`` overrides ``params.rho``; the endpoints 0 and 1 are allowed here
    and give the empty and the full lattice.
    """
    r = params.rho if rho is None else float(rho)
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {r}")
    rng = np.random.default_rng(seed)
    occ = (rng.random(params.num_sites) < r).astype(np.int8)
    return Configuration(occ, params.d, params.side)


def perturbed_marginals(params: ScalingParams, phi) -> np.ndarray:
    """Site marginals rho + chi(rho) a_n n^-d phi(x/n).

    ``phi`` takes an array of macroscopic positions of shape (m, d) (or (m,)
    when d = 1) and returns m values.
    """
    pos = site_positions(params) / params.n
    arg = pos[:, 0] if params.d == 1 else pos
    vals = np.asarray(phi(arg), dtype=float).reshape(-1)
    p = params.rho + chi(params.rho) * params.tilt_scale * vals
    bad = np.flatnonzero((p < 0) | (p > 1))
    if bad.size:
        raise MarginalError(int(bad[0]), float(p[bad[0]]))
    return p


def sample_perturbed(params: ScalingParams, phi, seed: int) -> Configuration:
    """Draw from the product measure with marginals rho + chi a_n n^-d phi(x/n)."""
    p = perturbed_marginals(params, phi)
    rng = np.random.default_rng(seed)
    occ = (rng.random(params.num_sites) < p).astype(np.int8)
    return Configuration(occ, params.d, params.side)


def torus_wrap(u, L):
    """Reduce macroscopic coordinates into [-L/2, L/2)."""
    return np.mod(np.asarray(u, dtype=float) + L / 2.0, L) - L / 2.0
