"""Deterministic numerics: heat kernels, the linear hydrodynamic solution,
rate functionals, fractional Brownian motion and the explicit minimizers.

Everything here is one-dimensional except :func:`heat_kernel`.  The
optimal profiles are superpositions of the time-integrated heat kernel

    G(tau, v) = int_0^tau p_s(v) ds
              = sqrt(2 tau / pi) exp(-v^2 / 2 tau) - |v| erfc(|v| / sqrt(2 tau)),

whose space derivative is -sign(v) erfc(|v| / sqrt(2 tau)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, special

from .model import chi
from .testfn import TestFunction

__all__ = [
    "QuadratureError",
    "ProfilePair",
    "CovMatrix",
    "heat_kernel",
    "heat_G",
    "heat_dG",
    "solve_mu",
    "mu_time_integral",
    "field_prediction",
    "weak_solution_residual",
    "q0",
    "qdyn",
    "inner_h1",
    "rate_functional",
    "sigma_sq",
    "fbm_cov",
    "cov_matrix",
    "c_K",
    "fbm_kernel",
    "kernel_weights",
    "kernel_sq_integral",
    "kernel_integral",
    "fbm_sample",
    "i_path",
    "finite_dim_rate",
    "optimal_profile",
    "minimizer_multi",
    "verify_integrals",
    "minimize_path_rate",
]

SQRT2PI = math.sqrt(2.0 * math.pi)
SPACE_CUT = 10.0  # heat-kernel tails beyond 10 standard deviations are dropped


class QuadratureError(RuntimeError):
    """An adaptive quadrature did not reach its tolerance."""


def _quad(f, a, b, points=None, epsabs=1e-13, epsrel=1e-10, limit=400):
    if a == b:
        return 0.0
    pts = None
    if points is not None:
        pts = sorted({float(p) for p in points if a < p < b})
        pts = pts or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(f, a, b, points=pts, epsabs=epsabs, epsrel=epsrel, limit=limit,
                             full_output=1)
    val, err = res[0], res[1]
    if not np.isfinite(val) or err > max(1e3 * epsabs, 1e-7 * abs(val), 1e-10):
        raise QuadratureError(f"quadrature on [{a}, {b}] stalled: value {val:.6g}, error {err:.2g}")
    return val


# ---------------------------------------------------------------------------
# heat kernel


def heat_kernel(t, u, d: int = 1):
    """Brownian transition density (2 pi t)^(-d/2) exp(-|u|^2 / 2t).

    ``u`` has trailing dimension ``d`` when d > 1.
    """
    if np.any(np.asarray(t) <= 0):
        raise ValueError("heat kernel needs t > 0")
    u = np.asarray(u, dtype=float)
    r2 = u ** 2 if d == 1 else np.sum(u ** 2, axis=-1)
    out = (2.0 * np.pi * t) ** (-d / 2.0) * np.exp(-r2 / (2.0 * t))
    return float(out) if np.ndim(out) == 0 else out


def _p(t, u):
    return np.exp(-u * u / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)


def _dp(t, u):
    """d/du p_t(u)."""
    return -u / t * _p(t, u)


def heat_G(tau, v):
    """int_0^tau p_s(v) ds, zero for tau <= 0."""
    tau = np.asarray(tau, dtype=float)
    v = np.abs(np.asarray(v, dtype=float))
    ts = np.where(tau > 0, tau, 1.0)
    out = np.sqrt(2 * ts / np.pi) * np.exp(-v * v / (2 * ts)) - v * special.erfc(v / np.sqrt(2 * ts))
    out = np.where(tau > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def heat_dG(tau, v):
    """d/dv int_0^tau p_s(v) ds = -sign(v) erfc(|v| / sqrt(2 tau)), zero for tau <= 0."""
    tau = np.asarray(tau, dtype=float)
    v = np.asarray(v, dtype=float)
    ts = np.where(tau > 0, tau, 1.0)
    out = np.where(tau > 0, -np.sign(v) * special.erfc(np.abs(v) / np.sqrt(2 * ts)), 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# profiles


@dataclass
class ProfilePair:
    """An initial perturbation phi(v) and a gradient field dH(r, v) in d = 1.

    Parameters
    ----------
    phi, hgrad : callable
        Vectorized in their array arguments.
    horizon : float
        dH vanishes for r >= horizon.
    extent : float
        phi and dH are negligible for |v| > extent.
    time_points, space_points : tuple
        Where phi or dH fail to be smooth; quadratures split there.
    heat_terms : (coef, t_end) arrays or None
        Set when H(r, v) = sum_j coef_j G(t_j - r, v) and phi = H(0, .).
    """

    phi: object
    hgrad: object
    horizon: float
    extent: float
    time_points: tuple = ()
    space_points: tuple = ()
    heat_terms: tuple | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def zero(cls):
        return cls(lambda v: np.zeros_like(np.asarray(v, float)),
                   lambda r, v: np.zeros(np.broadcast(np.asarray(r), np.asarray(v)).shape),
                   horizon=0.0, extent=1.0)

    @classmethod
    def heat(cls, coefs, t_ends, meta=None):
        """H(r, v) = sum_j coefs_j G(t_j - r, v); phi = H(0, .)."""
        c = np.atleast_1d(np.asarray(coefs, dtype=float))
        te = np.atleast_1d(np.asarray(t_ends, dtype=float))
        if c.shape != te.shape or np.any(te <= 0):
            raise ValueError("need matching coefficient and positive end-time arrays")

        def phi(v):
            v = np.asarray(v, dtype=float)
            return sum(cj * heat_G(tj, v) for cj, tj in zip(c, te)) + 0.0 * v

        def hgrad(r, v):
            r = np.asarray(r, dtype=float)
            v = np.asarray(v, dtype=float)
            return sum(cj * heat_dG(tj - r, v) for cj, tj in zip(c, te)) + 0.0 * (r + v)

        tmax = float(te.max())
        return cls(phi, hgrad, horizon=tmax, extent=SPACE_CUT * math.sqrt(tmax),
                   time_points=tuple(te), space_points=(0.0,), heat_terms=(c, te),
                   meta=dict(meta or {}))

    @classmethod
    def from_test_functions(cls, phi: TestFunction | None, H: TestFunction | None, T: float):
        """Profile of smooth compactly supported (phi, H) in d = 1."""
        ext = 1e-6
        for f in (phi, H):
            if f is not None:
                if f.d != 1:
                    raise ValueError("profiles are one-dimensional")
                ext = max(ext, f.support_radius(T))
        phi_f = (lambda v: np.zeros_like(np.asarray(v, float))) if phi is None else phi.spatial(0.0)
        if H is None:
            hg = lambda r, v: np.zeros(np.broadcast(np.asarray(r), np.asarray(v)).shape)
        else:
            hg = lambda r, v: H.grad(*np.broadcast_arrays(np.asarray(r, float),
                                                            np.asarray(v, float)))
        return cls(phi_f, hg, horizon=float(T), extent=ext)

    def __add__(self, other):
        heat = None
        if self.heat_terms is not None and other.heat_terms is not None:
            heat = (np.concatenate([self.heat_terms[0], other.heat_terms[0]]),
                    np.concatenate([self.heat_terms[1], other.heat_terms[1]]))
        return ProfilePair(
            lambda v: self.phi(v) + other.phi(v),
            lambda r, v: self.hgrad(r, v) + other.hgrad(r, v),
            horizon=max(self.horizon, other.horizon),
            extent=max(self.extent, other.extent),
            time_points=tuple(sorted(set(self.time_points) | set(other.time_points))),
            space_points=tuple(sorted(set(self.space_points) | set(other.space_points))),
            heat_terms=heat,
        )

    def scaled(self, c):
        heat = None if self.heat_terms is None else (c * self.heat_terms[0], self.heat_terms[1])
        return ProfilePair(lambda v: c * self.phi(v), lambda r, v: c * self.hgrad(r, v),
                           self.horizon, self.extent, self.time_points, self.space_points, heat,
                           dict(self.meta))

    def to_test_function(self, cutoff: float | None = None) -> TestFunction:
        """The tilt H as a :class:`TestFunction` (heat-type profiles only).

        ``cutoff`` truncates each term at |u| = cutoff; the default keeps
        SPACE_CUT / 2 standard deviations of the widest term.
        """
        if self.heat_terms is None:
            raise ValueError("only heat-type profiles have a TestFunction form")
        c, te = self.heat_terms
        cut = 0.5 * self.extent if cutoff is None else cutoff
        H = TestFunction.zero(1)
        for cj, tj in zip(c, te):
            H = H + TestFunction.heat(cj, tj, cut)
        return H


def _gl(nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return x, w


def _split_points(a, b, points):
    return [a] + sorted(p for p in set(points) if a < p < b) + [b]


def _space_integral(f, prof_or_points, extent):
    """Integral of f over [-extent, extent], split at the given points."""
    pts = prof_or_points
    edges = _split_points(-extent, extent, pts)
    return sum(_quad(f, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]))


def _graded_rule(lo, hi, points, levels=24, order=10, width=0.1):
    """Composite Gauss-Legendre nodes on [lo, hi]: panels of at most
    ``width``, graded geometrically towards each point in ``points`` where
    the integrand may kink."""
    pts = sorted({float(p) for p in points if lo < p < hi})
    edges = {lo, hi, *pts}
    for a, b in zip([lo] + pts, pts + [hi]):
        edges.update(np.linspace(a, b, max(2, int(math.ceil((b - a) / width)) + 1))[1:-1])
    for p in pts:
        left = max(e for e in edges if e < p)
        right = min(e for e in edges if e > p)
        for k in range(1, levels + 1):
            edges.add(p - (p - left) * 0.5 ** k)
            edges.add(p + (right - p) * 0.5 ** k)
    e = np.array(sorted(edges))
    x, w = _gl(order)
    half = 0.5 * np.diff(e)[:, None]
    mid = 0.5 * (e[1:] + e[:-1])[:, None]
    return (mid + half * x).ravel(), (half * w).ravel()


def _time_rule(top, points, nodes=32):
    """Gauss-Legendre nodes on [0, top] split at ``points``; each piece
    [a, b] uses r = b - (b - a) y^2 to absorb sqrt(b - r) behaviour."""
    edges = _split_points(0.0, top, points)
    x, w = _gl(nodes)
    y, wy = 0.5 * (x + 1.0), 0.5 * w
    rs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        rs.append(b - (b - a) * y * y)
        ws.append(2.0 * (b - a) * y * wy)
    return np.concatenate(rs), np.concatenate(ws)


# ---------------------------------------------------------------------------
# linear hydrodynamics


def _phi_term(profile, t, u):
    if t == 0:
        return float(profile.phi(u))
    w = SPACE_CUT * math.sqrt(t)
    pts = [u] + [p for p in profile.space_points]
    edges = _split_points(u - w, u + w, pts)
    f = lambda v: _p(t, u - v) * profile.phi(v)
    return sum(_quad(f, lo, hi) for lo, hi in zip(edges[:-1], edges[1:]))


def _h_term(profile, t, u):
    # int_0^t int p'_{t-s}(u - v) dH(s, v) dv ds with s = t - w^2, which
    # removes the (t - s)^(-1/2) growth of the inner convolution
    top = min(t, profile.horizon)
    if top <= 0:
        return 0.0

    def inner(w):
        if w == 0.0:
            return 0.0
        s = t - w * w
        half = SPACE_CUT * w
        edges = _split_points(u - half, u + half, [u] + list(profile.space_points))
        g = lambda v: _dp(w * w, u - v) * profile.hgrad(s, v)
        return 2.0 * w * sum(_quad(g, lo, hi, epsabs=1e-14) for lo, hi in
                             zip(edges[:-1], edges[1:]))

    wlo = math.sqrt(t - top)
    pts = [math.sqrt(t - tp) for tp in profile.time_points if t - top < t - tp < t]
    return _quad(inner, wlo, math.sqrt(t), points=pts, epsabs=1e-12, epsrel=1e-9)


def solve_mu(profile: ProfilePair, rho: float, t: float, u):
    """Solution of the linear tilted hydrodynamic equation in d = 1.

    mu(t, u) = chi int p_t(u - v) phi(v) dv
               - chi int_0^t int p'_{t-s}(u - v) dH(s, v) dv ds,

    the mild form of d_t mu = (1/2) mu'' - chi (dH)', mu(0) = chi phi.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    c = chi(rho)
    uu = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.array([c * (_phi_term(profile, t, x) - _h_term(profile, t, x)) for x in uu])
    return float(out[0]) if np.ndim(u) == 0 else out.reshape(np.shape(u))


def mu_heat_closed_form(profile: ProfilePair, rho: float, t: float, u):
    """Exact mu for heat-type profiles (used as a check of :func:`solve_mu`).

    For one term c G(t_j - r, .): chi c [G(t, u) + G(t_j - t, u)] while
    t <= t_j and chi c [G(t, u) - G(t - t_j, u)] afterwards.
    """
    if profile.heat_terms is None:
        raise ValueError("closed form needs a heat-type profile")
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    for cj, tj in zip(*profile.heat_terms):
        if t <= tj:
            out = out + cj * (heat_G(t, u) + heat_G(tj - t, u))
        else:
            out = out + cj * (heat_G(t, u) - heat_G(t - tj, u))
    out = chi(rho) * out
    return float(out) if out.ndim == 0 else out


def mu_time_integral(profile: ProfilePair, rho: float, t: float, u: float = 0.0) -> float:
    """int_0^t mu(s, u) ds.

    After exchanging the order of integration the time integrals of the
    heat kernel are explicit, leaving
    chi [ int G(t, u - v) phi(v) dv - int_0^t int dG(t - r, u - v) dH(r, v) dv dr ].
    Both integrals use composite Gauss-Legendre rules graded towards v = u,
    the profile's space points and the ends of each time segment.
    """
    c = chi(rho)
    ext = profile.extent + SPACE_CUT * math.sqrt(t) + abs(u)
    v, w = _graded_rule(-ext, ext, list(profile.space_points) + [u])
    a = float(w @ (heat_G(t, u - v) * profile.phi(v)))
    top = min(t, profile.horizon)
    if top <= 0:
        return c * a
    r, wr = _time_rule(top, [p for p in profile.time_points if 0 < p < top])
    R = r[:, None]
    V = v[None, :]
    b = float(wr @ ((heat_dG(t - R, u - V) * profile.hgrad(R, V)) @ w))
    return c * (a - b)


def field_prediction(profile: ProfilePair, rho: float, t: float, G: TestFunction) -> float:
    """int mu(t, u) G(u) du for the mu of :func:`solve_mu` (G static, d = 1).

    The u-integral is taken inside the mild form (see :func:`field_pairing`),
    which avoids evaluating mu pointwise by nested quadrature.
    """
    if G.d != 1 or not G.is_static():
        raise ValueError("field prediction expects a static one-dimensional G")
    R = G.support_radius(0.0)
    return field_pairing(profile, rho, t, lambda u: G.value(0.0, u), lambda u: G.grad(0.0, u), R)


class _Smoother:
    """(p_tau * fun)(v) for a smooth ``fun`` supported in [-R, R].

    Wide kernels use a composite Gauss-Legendre rule in y (bump derivatives
    rise steeply near the edge of their support); narrow ones use
    Gauss-Hermite nodes around v.
    """

    def __init__(self, fun, R, width=0.02, order=8, hermite=64, narrow=0.01):
        self.fun, self.R, self.narrow = fun, R, narrow
        e = np.linspace(-R, R, max(2, int(math.ceil(2 * R / width)) + 1))
        x, w = _gl(order)
        half = 0.5 * np.diff(e)[:, None]
        self.y = (0.5 * (e[1:] + e[:-1])[:, None] + half * x).ravel()
        self.w = (half * w).ravel()
        self.fy = fun(self.y)
        keep = self.fy != 0
        self.y, self.w, self.fy = self.y[keep], self.w[keep], self.fy[keep]
        z, wz = np.polynomial.hermite_e.hermegauss(hermite)
        self.z, self.wz = z, wz / SQRT2PI

    def __call__(self, tau, v):
        v = np.asarray(v, dtype=float)
        if tau <= 0:
            return self.fun(v)
        sd = math.sqrt(tau)
        out = np.zeros_like(v)
        near = np.abs(v) < self.R + SPACE_CUT * sd
        if sd > self.narrow:
            out[near] = (_p(tau, v[near][:, None] - self.y) * self.fy) @ self.w
        else:
            out[near] = self.fun(v[near][:, None] - sd * self.z) @ self.wz
        return out

    def time_integral(self, tau, v, nodes=24):
        """int_0^tau (p_s * fun)(v) ds.

        The integrand is smooth in s but varies on the scale of the squared
        feature width of ``fun`` near s = 0, so s = tau y^2 grades the nodes.
        """
        if tau <= 0:
            return np.zeros_like(np.asarray(v, dtype=float))
        x, w = _gl(nodes)
        y = 0.5 * (x + 1.0)
        return sum(tau * yk * wk * self(tau * yk * yk, v) for yk, wk in zip(y, w))


def _pairing(profile, rho, t, fun, dfun, R):
    # chi int phi fun(t) dv + chi int_0^t int dH(r, v) dfun(t - r) dv dr
    c = chi(rho)
    ext = profile.extent + R + SPACE_CUT * math.sqrt(t)
    v, w = _graded_rule(-ext, ext, profile.space_points)
    a = float(np.sum(w * profile.phi(v) * fun(t, v)))
    top = min(t, profile.horizon)
    if top <= 0:
        return c * a
    r, wr = _time_rule(top, profile.time_points)
    b = sum(wk * float(np.sum(w * profile.hgrad(rk, v) * dfun(t - rk, v))) for rk, wk in zip(r, wr))
    return c * (a + b)


def field_pairing(profile: ProfilePair, rho: float, t: float, g, dg, R: float) -> float:
    """<mu_t, g> computed without forming mu.

    Moving the u-integral inside and integrating by parts once,
    <mu_t, g> = chi int phi (p_t * g) dv + chi int_0^t int dH(r, v) (p_{t-r} * g')(v) dv dr.
    ``g`` and its derivative ``dg`` are smooth and supported in [-R, R].
    """
    return _pairing(profile, rho, t, _Smoother(g, R), _Smoother(dg, R), R)


def field_pairing_integral(profile: ProfilePair, rho: float, t: float, f, df, R: float) -> float:
    """int_0^t <mu_s, f> ds, with the time integral taken inside the kernel."""
    sf, sdf = _Smoother(f, R), _Smoother(df, R)
    return _pairing(profile, rho, t, sf.time_integral, sdf.time_integral, R)


def weak_solution_residual(profile: ProfilePair, rho: float, G: TestFunction, t: float) -> float:
    """|<mu_t, G_t> - chi <phi, G_0> - int_0^t <mu_s, (d_s + D/2) G_s> ds
        - chi int_0^t int dG dH du ds| for a static test function G (d = 1).

    Every pairing with mu goes through the mild form (no closed form is used).
    """
    if G.d != 1:
        raise ValueError("weak residual is one-dimensional")
    if not G.is_static():
        raise ValueError("weak residual expects a time-independent G")
    c = chi(rho)
    R = G.support_radius(0.0)
    g = lambda u: G.value(0.0, u)
    dg = lambda u: G.grad(0.0, u)
    lap = lambda u: 0.5 * G.laplacian(0.0, u)
    dlap = _derivative_of(lap, R)

    left = field_pairing(profile, rho, t, g, dg, R)
    init = c * _space_integral(lambda v: profile.phi(v) * g(v), list(profile.space_points), R)
    gen = field_pairing_integral(profile, rho, t, lap, dlap, R)
    top = min(t, profile.horizon)
    cross = 0.0
    if top > 0:
        inner = lambda r: _space_integral(lambda v: dg(v) * profile.hgrad(r, v),
                                          list(profile.space_points), R)
        cross = c * _quad(inner, 0.0, top, points=[p for p in profile.time_points if 0 < p < top])
    return abs(left - init - gen - cross)


def _derivative_of(f, R, h=1e-4):
    # fourth-order centred difference; f is C-infinity with compact support
    return lambda u: (-f(u + 2 * h) + 8 * f(u + h) - 8 * f(u - h) + f(u - 2 * h)) / (12 * h)


# ---------------------------------------------------------------------------
# rate functionals


def _as_grad(H):
    """(gradient callable, horizon, extent, time points, space points)."""
    if isinstance(H, ProfilePair):
        return H.hgrad, H.horizon, H.extent, H.time_points, H.space_points
    if isinstance(H, TestFunction):
        if H.d != 1:
            raise ValueError("one-dimensional test functions only")
        return (lambda r, v: H.grad(*np.broadcast_arrays(np.asarray(r, float), np.asarray(v, float))),
                None, H.support_radius(0.0), (), ())
    raise TypeError("expected a ProfilePair or TestFunction")


def q0(phi, rho: float, extent: float | None = None, points=()) -> float:
    """chi/2 ||phi||^2; ``phi`` is a ProfilePair or a callable with ``extent``."""
    if isinstance(phi, ProfilePair):
        f, ext, pts = phi.phi, phi.extent, phi.space_points
    else:
        if extent is None:
            raise ValueError("an extent is needed for a bare callable")
        f, ext, pts = phi, extent, points
        # bare callables may be singular; keep the adaptive rule for them
        return 0.5 * chi(rho) * _space_integral(lambda v: f(v) ** 2, pts, ext)
    v, w = _graded_rule(-ext, ext, pts)
    return 0.5 * chi(rho) * float(w @ f(v) ** 2)


def inner_h1(H, G, T: float | None = None) -> float:
    """[H, G] = int_0^T int dH dG dv dr (d = 1).

    Composite Gauss-Legendre in both variables, graded towards the time and
    space points where the gradients kink.
    """
    fh, th, eh, tph, sph = _as_grad(H)
    fg, tg, eg, tpg, spg = _as_grad(G)
    horizons = [h for h in (th, tg, T) if h is not None]
    if not horizons:
        raise ValueError("a horizon T is needed for two TestFunctions")
    top = min(horizons)
    if top <= 0:
        return 0.0
    ext = max(eh, eg)
    v, w = _graded_rule(-ext, ext, set(sph) | set(spg))
    r, wr = _time_rule(top, [p for p in set(tph) | set(tpg) if 0 < p < top])
    R = r[:, None]
    V = v[None, :]
    return float(wr @ ((fh(R, V) * fg(R, V)) @ w))


def qdyn(H, rho: float, T: float | None = None) -> float:
    """chi/2 [H, H]."""
    return 0.5 * chi(rho) * inner_h1(H, H, T)


def rate_functional(profile: ProfilePair, rho: float) -> float:
    """Q = Q_0 + Q_dyn of the trajectory generated by ``profile``."""
    return q0(profile, rho) + (qdyn(profile, rho) if profile.horizon > 0 else 0.0)


def sigma_sq(rho: float) -> float:
    """Limiting occupation-time variance constant 4 sqrt(2) chi / (3 sqrt(pi))."""
    return 4.0 * math.sqrt(2.0) * chi(rho) / (3.0 * math.sqrt(math.pi))


# ---------------------------------------------------------------------------
# fractional Brownian motion, H = 3/4


def fbm_cov(s, t):
    """a(s, t) = (t^{3/2} + s^{3/2} - |t - s|^{3/2}) / 2."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("times must be >= 0")
    out = 0.5 * (t ** 1.5 + s ** 1.5 - np.abs(t - s) ** 1.5)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CovMatrix:
    times: np.ndarray
    matrix: np.ndarray
    cholesky: np.ndarray

    def solve(self, b):
        return linalg.cho_solve((self.cholesky, True), np.asarray(b, dtype=float))


def _check_times(times):
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1 or t.size == 0 or np.any(t <= 0):
        raise ValueError("times must be a non-empty vector of positive reals")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    return t


def cov_matrix(times) -> CovMatrix:
    """Covariance matrix a(t_i, t_j) with a positive-definiteness check."""
    t = _check_times(times)
    A = fbm_cov(t[:, None], t[None, :])
    try:
        L = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is not positive definite") from exc
    return CovMatrix(t, A, L)


def _beta_quarter_half() -> float:
    # int_0^1 x^{-3/4} (1 - x)^{-1/2} dx with the algebraic endpoint weight
    return integrate.quad(lambda x: 1.0, 0.0, 1.0, weight="alg", wvar=(-0.75, -0.5),
                          epsabs=1e-14, epsrel=1e-13)[0]


def c_K() -> float:
    """Normalization sqrt(3 / (8 B(1/4, 1/2))) of the Volterra kernel."""
    return math.sqrt(3.0 / (8.0 * _beta_quarter_half()))


_CK = c_K()
_GL_K = np.polynomial.legendre.leggauss(48)


def fbm_kernel(t, s):
    """K(t, s) = c_K s^{-1/4} int_s^t (u - s)^{-3/4} u^{1/4} du for 0 < s < t.

    The substitution u = s + w^4 makes the inner integrand smooth:
    int_0^{(t-s)^{1/4}} 4 (s + w^4)^{1/4} dw.  Arrays broadcast.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= t):
        raise ValueError("fbm_kernel needs 0 < s < t")
    top = (t - s) ** 0.25
    x, w = _GL_K
    wnode = 0.5 * top[..., None] * (x + 1.0)
    inner = 0.5 * top * np.sum(w * 4.0 * (s[..., None] + wnode ** 4) ** 0.25, axis=-1)
    out = _CK * s ** -0.25 * inner
    return float(out) if out.ndim == 0 else out


def kernel_sq_integral(t: float) -> float:
    """int_0^t K(t, s)^2 ds, which must equal t^{3/2}.

    Integrated in x = s^{1/4}, where the integrand 4 x^3 K(t, x^4)^2 is bounded.
    """
    f = lambda x: 4.0 * x ** 3 * fbm_kernel(t, x ** 4) ** 2
    return _quad(f, 0.0, t ** 0.25, epsabs=1e-14, epsrel=1e-11)


def kernel_integral(t: float) -> float:
    """int_0^t K(t, s) ds, the path with unit velocity."""
    if t <= 0:
        return 0.0
    f = lambda x: 4.0 * x ** 3 * fbm_kernel(t, x ** 4)
    return _quad(f, 0.0, t ** 0.25, epsabs=1e-14, epsrel=1e-11)


def _kernel_or_zero(t, s):
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    out = np.zeros(t.shape)
    m = (s > 0) & (s < t)
    if np.any(m):
        out[m] = fbm_kernel(t[m], s[m])
    return out


def kernel_weights(times, edges, nodes: int = 8) -> np.ndarray:
    """W[i, j] = int over cell [edges_j, edges_j+1] of K(times_i, s) ds.

    Cells are integrated in x = s^{1/4}, which absorbs the s^{-1/4}
    singularity at 0; the cell containing t_i is split at t_i.
    """
    t = np.atleast_1d(np.asarray(times, dtype=float))
    e = np.asarray(edges, dtype=float)
    x, w = _gl(nodes)
    W = np.zeros((t.size, e.size - 1))
    for i, ti in enumerate(t):
        lo = e[:-1]
        hi = np.minimum(e[1:], ti)
        m = hi > lo
        if not np.any(m):
            continue
        a = lo[m] ** 0.25
        b = hi[m] ** 0.25
        xs = 0.5 * (b - a)[:, None] * (x + 1.0) + a[:, None]
        s = xs ** 4
        vals = _kernel_or_zero(ti, s) * 4.0 * xs ** 3
        W[i, m] = 0.5 * (b - a) * np.sum(w * vals, axis=1)
    return W


def fbm_sample(grid, seed=0, substeps: int = 16, size: int | None = None):
    """Sample int_0^t K(t, s) dB_s on ``grid``.

    The stochastic integral is discretized on ``substeps`` cells per grid
    interval; each Brownian increment is weighted by the cell integral of
    the kernel divided by the cell length.  Returns shape (len(grid),) or
    (size, len(grid)).
    """
    g = np.asarray(grid, dtype=float)
    if np.any(np.diff(g) <= 0) or g[0] < 0:
        raise ValueError("grid must be increasing and nonnegative")
    edges = np.unique(np.concatenate([[0.0], np.linspace(0.0, g[-1], substeps * g.size + 1)[1:], g]))
    ds = np.diff(edges)
    W = kernel_weights(g, edges) / ds
    rng = np.random.default_rng(seed)
    n = 1 if size is None else int(size)
    dB = rng.standard_normal((n, ds.size)) * np.sqrt(ds)
    out = dB @ W.T
    return out[0] if size is None else out


@dataclass(frozen=True)
class PathRateInfo:
    value: float
    residual: float
    threshold: float
    in_space: bool
    velocity: np.ndarray


def i_path(gamma, grid, threshold: float = 1e-3, info: bool = False):
    """Sample-path rate (1/2) int gdot^2 of gamma(t) = int_0^t K(t, s) gdot(s) ds.

    ``grid`` is uniform and starts at 0 (with gamma(0) = 0) or at the first
    step.  gdot is taken piecewise constant on grid cells; the lower
    triangular first-kind system is solved with Tikhonov damping
    1e-8 ||W||^2.  When the relative residual exceeds ``threshold`` gamma is
    declared outside the Cameron-Martin space and +inf is returned.
    """
    g = np.asarray(grid, dtype=float)
    y = np.asarray(gamma, dtype=float)
    if g.size != y.size:
        raise ValueError("gamma and grid differ in length")
    if g[0] == 0.0:
        g, y = g[1:], y[1:]
    if g.size < 64:
        raise ValueError("i_path needs at least 64 grid points")
    h = g[1] - g[0]
    if not np.allclose(np.diff(g), h, rtol=1e-9, atol=1e-12) or not math.isclose(g[0], h, rel_tol=1e-9):
        raise ValueError("grid must be uniform with step equal to its first point")
    edges = np.concatenate([[0.0], g])
    W = kernel_weights(g, edges)
    lam = 1e-8 * np.linalg.norm(W, 2) ** 2
    A = W.T @ W + lam * np.eye(W.shape[1])
    x = linalg.solve(A, W.T @ y, assume_a="pos")
    scale = max(np.linalg.norm(y), 1e-300)
    res = float(np.linalg.norm(W @ x - y) / scale) if np.any(y) else 0.0
    ok = res <= threshold
    val = 0.5 * float(np.sum(x ** 2) * h) if ok else math.inf
    if info:
        return PathRateInfo(val, res, threshold, ok, x)
    return val


def _sorted_pairs(alpha, times):
    # the constraints are a set of (t_i, alpha_i) pairs; order them by time
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if a.shape != t.shape:
        raise ValueError("alpha and times differ in length")
    order = np.argsort(t, kind="stable")
    if np.any(np.diff(t[order]) == 0):
        raise ValueError("repeated constraint times make the covariance matrix singular")
    return a[order], t[order]


def finite_dim_rate(alpha, times, rho: float) -> float:
    """(1 / 2 sigma^2) alpha^T A^{-1} alpha with A = a(t_i, t_j).

    The pairs (alpha_i, t_i) may come in any order; times must be distinct.
    """
    a, t = _sorted_pairs(alpha, times)
    C = cov_matrix(t)
    return float(a @ C.solve(a)) / (2.0 * sigma_sq(rho))


def _c0(t, alpha, rho):
    return 3.0 * math.sqrt(math.pi) * alpha / (4.0 * math.sqrt(2.0) * t ** 1.5 * chi(rho))


def optimal_profile(t: float, alpha: float, rho: float) -> ProfilePair:
    """Minimizer of Q under int_0^t mu(s, 0) ds = alpha.

    phi = c0 G(t, .) and H(r, .) = c0 G(t - r, .), so
    dH(r, v) = c0 int_0^{t-r} p'_s(v) ds for r < t and 0 afterwards.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    c = _c0(t, alpha, rho)
    return ProfilePair.heat([c], [t], meta={"times": [t], "alpha": [alpha], "c0": c, "rho": rho})


def minimizer_multi(alpha, times, rho: float) -> ProfilePair:
    """Superposition sum_i beta_i (phi^{t_i,1}, H^{t_i,1}) with beta = D^{-1} A^{-1} alpha."""
    a, t = _sorted_pairs(alpha, times)
    C = cov_matrix(t)
    t = C.times
    beta = t ** 1.5 * C.solve(a)
    coefs = np.array([b * _c0(tj, 1.0, rho) for b, tj in zip(beta, t)])
    return ProfilePair.heat(coefs, t, meta={"times": list(t), "alpha": list(a),
                                            "beta": list(beta), "rho": rho})


def _time_integral_of_heat(v, T):
    return _quad(lambda s: float(_p(s, v)) if s > 0 else 0.0, 0.0, T, epsabs=1e-15, epsrel=1e-12)


def _time_integral_of_dheat(v, T):
    return _quad(lambda s: float(_dp(s, v)) if s > 0 else 0.0, 0.0, T, epsabs=1e-15, epsrel=1e-12)


def verify_integrals(T: float = 1.0, pair=(1.0, 2.0)) -> dict:
    """Quadrature against closed form for the three heat-kernel identities.

    ``cal1``: int (int_0^T p_s ds)^2 dv = 4 (2 - sqrt 2) T^{3/2} / (3 sqrt pi);
    ``cal2``: int_0^T int (int_0^{T-r} p'_s ds)^2 dv dr = 8 (sqrt 2 - 1) T^{3/2} / (3 sqrt pi);
    ``cal3``: int_0^{t_i} mu^{t_j,1}(s, 0) ds = a(t_i, t_j) / t_j^{3/2}.
    The heat-kernel time integrals inside cal1 and cal2 are themselves
    computed by quadrature.
    """
    rp = 1.0 / (3.0 * math.sqrt(math.pi))
    ext = SPACE_CUT * math.sqrt(T)
    cal1 = 2.0 * _quad(lambda v: _time_integral_of_heat(v, T) ** 2, 0.0, ext,
                       epsabs=1e-14, epsrel=1e-11)

    def slab(r):
        # int (int_0^{T-r} p'_s(v) ds)^2 dv, odd integrand squared is even
        tau = T - r
        if tau <= 0:
            return 0.0
        return 2.0 * _quad(lambda v: _time_integral_of_dheat(v, tau) ** 2, 0.0,
                           SPACE_CUT * math.sqrt(tau), epsabs=1e-15, epsrel=1e-11)

    # the slab integrand behaves like sqrt(T - r); r = T - x^2 makes it smooth
    cal2 = _quad(lambda x: 2.0 * x * slab(T - x * x), 0.0, math.sqrt(T), epsabs=1e-14,
                 epsrel=1e-11)
    ti, tj = pair
    cal3 = mu_time_integral(optimal_profile(tj, 1.0, 0.5), 0.5, ti)
    return {
        "cal1": (cal1, 4.0 * (2.0 - math.sqrt(2.0)) * T ** 1.5 * rp),
        "cal2": (cal2, 8.0 * (math.sqrt(2.0) - 1.0) * T ** 1.5 * rp),
        "cal3": (cal3, fbm_cov(ti, tj) / tj ** 1.5),
    }


def minimize_path_rate(alpha, times, grid, rho: float = 0.5) -> float:
    """Constrained minimum of (1/2) sum gdot_j^2 ds over piecewise-constant gdot.

    Constraints sum_j W(t_i)_j gdot_j = alpha_i, with W the cell integrals of
    the kernel.  The minimum-norm solution gives (ds / 2) alpha^T (W W^T)^{-1} alpha;
    the result is divided by sigma^2(rho) for comparison with
    :func:`finite_dim_rate`.
    """
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    t = _check_times(times)
    g = np.asarray(grid, dtype=float)
    if g[0] != 0.0:
        g = np.concatenate([[0.0], g])
    h = np.diff(g)
    if not np.allclose(h, h[0], rtol=1e-9):
        raise ValueError("grid must be uniform")
    if not all(np.any(np.isclose(g, ti, rtol=0, atol=1e-12 * max(1.0, ti))) for ti in t):
        raise ValueError("grid must contain every constraint time")
    if not np.any(a):
        return 0.0
    C = kernel_weights(t, g)
    M = C @ C.T
    try:
        lamb = linalg.solve(M, a, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise ValueError("constraints are infeasible") from exc
    return 0.5 * h[0] * float(a @ lamb) / sigma_sq(rho)
