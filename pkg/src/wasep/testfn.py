"""Space-time test functions H(t, u) usable inside compiled kernels.

A :class:`TestFunction` is a finite sum of parametric terms.  Each term is a
``(kind, params)`` row, which lets the numba kernels evaluate any member of
the family without recompiling.  Two kinds exist:

``BUMP``
    ``amp * (1 + slope t) * psi(|u - c - w t| / R)`` with the standard
    mollifier ``psi(r) = exp(1 - 1/(1 - r^2))`` on ``r < 1``.  Smooth and
    compactly supported, any dimension.
``HEAT``
    ``c * G(t_end - t, u)`` for ``t < t_end`` and zero afterwards, where
    ``G(tau, u) = int_0^tau p_s(u) ds`` is the time-integrated heat kernel.
    One-dimensional; this is the optimal tilt of the occupation-time
    variational problem.  ``G`` has a kink at ``u = 0``, so its Laplacian
    carries a point mass that :meth:`TestFunction.laplacian` omits.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = ["TestFunction", "BUMP", "HEAT", "heat_G", "heat_dG"]

BUMP = 1
HEAT = 2
NPAR = 10

# HEAT terms are cut off where |G| < 1e-16 * |c| for every tau <= t_end.
HEAT_CUTOFF = 9.0

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@njit(cache=True, nogil=True)
def heat_G(tau, u):
    """int_0^tau p_s(u) ds for the standard 1-d heat kernel."""
    if tau <= 0.0:
        return 0.0
    a = abs(u)
    return math.sqrt(2.0 * tau / math.pi) * math.exp(-u * u / (2.0 * tau)) - a * math.erfc(
        a / math.sqrt(2.0 * tau)
    )


@njit(cache=True, nogil=True)
def heat_dG(tau, u):
    """d/du of :func:`heat_G`, i.e. int_0^tau p_s'(u) ds."""
    if tau <= 0.0:
        return 0.0
    if u == 0.0:
        return 0.0
    s = 1.0 if u > 0 else -1.0
    return -s * math.erfc(abs(u) / math.sqrt(2.0 * tau))


@njit(cache=True, nogil=True)
def _bump_s(p, t, u):
    # returns (s, y) where s = |y|^2/R^2 and y = u - c - w t
    R = p[1]
    s = 0.0
    for i in range(u.shape[0]):
        y = u[i] - p[3 + i] - p[6 + i] * t
        s += y * y
    return s / (R * R)


@njit(cache=True, nogil=True)
def _term_value(kind, p, t, u):
    if kind == BUMP:
        s = _bump_s(p, t, u)
        if s >= 1.0:
            return 0.0
        return p[0] * (1.0 + p[2] * t) * math.exp(1.0 - 1.0 / (1.0 - s))
    elif kind == HEAT:
        tau = p[1] - t
        if tau <= 0.0 or abs(u[0]) >= p[2]:
            return 0.0
        return p[0] * heat_G(tau, u[0])
    return 0.0


@njit(cache=True, nogil=True)
def eval_value(kinds, params, t, u):
    acc = 0.0
    for k in range(kinds.shape[0]):
        acc += _term_value(kinds[k], params[k], t, u)
    return acc


@njit(cache=True, nogil=True)
def eval_grad(kinds, params, t, u, axis):
    acc = 0.0
    for k in range(kinds.shape[0]):
        p = params[k]
        if kinds[k] == BUMP:
            s = _bump_s(p, t, u)
            if s >= 1.0:
                continue
            psi = math.exp(1.0 - 1.0 / (1.0 - s))
            y = u[axis] - p[3 + axis] - p[6 + axis] * t
            dpsi_ds = -psi / ((1.0 - s) * (1.0 - s))
            acc += p[0] * (1.0 + p[2] * t) * dpsi_ds * 2.0 * y / (p[1] * p[1])
        elif kinds[k] == HEAT:
            tau = p[1] - t
            if tau <= 0.0 or abs(u[0]) >= p[2]:
                continue
            acc += p[0] * heat_dG(tau, u[0])
    return acc


@njit(cache=True, nogil=True)
def eval_laplacian(kinds, params, t, u):
    acc = 0.0
    d = u.shape[0]
    for k in range(kinds.shape[0]):
        p = params[k]
        if kinds[k] == BUMP:
            s = _bump_s(p, t, u)
            if s >= 1.0:
                continue
            R2 = p[1] * p[1]
            psi = math.exp(1.0 - 1.0 / (1.0 - s))
            om = 1.0 - s
            ds = -psi / (om * om)
            dss = psi * (2.0 * s - 1.0) / (om * om * om * om)
            acc += p[0] * (1.0 + p[2] * t) * (dss * 4.0 * s / R2 + ds * 2.0 * d / R2)
        elif kinds[k] == HEAT:
            tau = p[1] - t
            if tau <= 0.0 or abs(u[0]) >= p[2]:
                continue
            x = u[0]
            acc += 2.0 * p[0] * math.exp(-x * x / (2.0 * tau)) / (_SQRT_2PI * math.sqrt(tau))
    return acc


@njit(cache=True, nogil=True)
def eval_dt(kinds, params, t, u):
    acc = 0.0
    d = u.shape[0]
    for k in range(kinds.shape[0]):
        p = params[k]
        if kinds[k] == BUMP:
            s = _bump_s(p, t, u)
            if s >= 1.0:
                continue
            psi = math.exp(1.0 - 1.0 / (1.0 - s))
            dpsi_ds = -psi / ((1.0 - s) * (1.0 - s))
            # d/dt of the moving centre contributes -w . grad psi
            transport = 0.0
            for i in range(d):
                y = u[i] - p[3 + i] - p[6 + i] * t
                transport += p[6 + i] * dpsi_ds * 2.0 * y / (p[1] * p[1])
            acc += p[0] * p[2] * psi - p[0] * (1.0 + p[2] * t) * transport
        elif kinds[k] == HEAT:
            tau = p[1] - t
            if tau <= 0.0 or abs(u[0]) >= p[2]:
                continue
            x = u[0]
            acc -= p[0] * math.exp(-x * x / (2.0 * tau)) / (_SQRT_2PI * math.sqrt(tau))
    return acc


@njit(cache=True, nogil=True)
def _vectorized(which, kinds, params, t, pts, axis):
    out = np.empty(pts.shape[0])
    for j in range(pts.shape[0]):
        u = pts[j]
        if which == 0:
            out[j] = eval_value(kinds, params, t[j], u)
        elif which == 1:
            out[j] = eval_grad(kinds, params, t[j], u, axis)
        elif which == 2:
            out[j] = eval_laplacian(kinds, params, t[j], u)
        else:
            out[j] = eval_dt(kinds, params, t[j], u)
    return out


class TestFunction:
    """Smooth, compactly supported H(t, u) on [0, T] x R^d.

    Parameters
    ----------
    d : int
        Spatial dimension.
    kinds, params : array_like
        Term table; see the module docstring.  An empty table is H = 0.
    """

    __test__ = False  # not a pytest class

    def __init__(self, d, kinds=(), params=None):
        self.d = int(d)
        self.kinds = np.asarray(kinds, dtype=np.int64).reshape(-1)
        if params is None:
            params = np.zeros((0, NPAR))
        self.params = np.asarray(params, dtype=np.float64).reshape(-1, NPAR)
        if self.params.shape[0] != self.kinds.shape[0]:
            raise ValueError("kinds and params disagree in length")
        if np.any(self.kinds == HEAT) and self.d != 1:
            raise ValueError("HEAT terms are one-dimensional")

    # construction ---------------------------------------------------------

    @classmethod
    def zero(cls, d=1):
        return cls(d)

    @classmethod
    def bump(cls, d=1, amplitude=1.0, radius=1.0, center=None, slope=0.0, velocity=None):
        """Mollifier bump; ``slope`` and ``velocity`` add time dependence."""
        p = np.zeros(NPAR)
        p[0], p[1], p[2] = amplitude, radius, slope
        if center is not None:
            p[3 : 3 + d] = np.broadcast_to(np.asarray(center, float), (d,))
        if velocity is not None:
            p[6 : 6 + d] = np.broadcast_to(np.asarray(velocity, float), (d,))
        if radius <= 0:
            raise ValueError("radius must be positive")
        return cls(d, [BUMP], p[None, :])

    @classmethod
    def heat(cls, coef, t_end, cutoff=None):
        """``coef * G(t_end - t, u)``, zero for t >= t_end (d = 1)."""
        if t_end <= 0:
            raise ValueError("t_end must be positive")
        p = np.zeros(NPAR)
        p[0], p[1] = coef, t_end
        p[2] = HEAT_CUTOFF * math.sqrt(t_end) if cutoff is None else cutoff
        return cls(1, [HEAT], p[None, :])

    def __add__(self, other):
        if not isinstance(other, TestFunction):
            return NotImplemented
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return TestFunction(
            self.d,
            np.concatenate([self.kinds, other.kinds]),
            np.vstack([self.params, other.params]),
        )

    def __mul__(self, c):
        p = self.params.copy()
        p[:, 0] *= float(c)
        return TestFunction(self.d, self.kinds.copy(), p)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # properties -----------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return self.kinds.size == 0 or bool(np.all(self.params[:, 0] == 0.0))

    def is_static(self) -> bool:
        """True when H does not depend on time."""
        for k, p in zip(self.kinds, self.params):
            if p[0] == 0.0:
                continue
            if k == HEAT or p[2] != 0.0 or np.any(p[6:9] != 0.0):
                return False
        return True

    def support_radius(self, T=0.0) -> float:
        """Radius of a ball around the origin holding the support on [0, T]."""
        r = 0.0
        for k, p in zip(self.kinds, self.params):
            if p[0] == 0.0:
                continue
            if k == BUMP:
                c = np.linalg.norm(p[3 : 3 + self.d])
                w = np.linalg.norm(p[6 : 6 + self.d])
                r = max(r, c + w * T + p[1])
            else:
                r = max(r, p[2])
        return float(r)

    def grad_bound(self, T) -> float:
        """Upper bound on max |d_i H| over [0, T] x R^d."""
        b = 0.0
        for k, p in zip(self.kinds, self.params):
            amp = abs(p[0])
            if amp == 0.0:
                continue
            if k == BUMP:
                # max_s |dpsi/ds| * 2 sqrt(s) / R, maximised numerically on a fine grid
                s = np.linspace(0.0, 1.0, 20001)[:-1]
                psi = np.exp(1.0 - 1.0 / (1.0 - s))
                g = np.max(psi / (1.0 - s) ** 2 * 2.0 * np.sqrt(s)) / p[1]
                tmax = max(abs(1.0 + p[2] * 0.0), abs(1.0 + p[2] * T))
                b += 1.01 * amp * tmax * g
            else:
                b += amp  # |erfc| <= 1
        return float(b)

    # evaluation -----------------------------------------------------------

    def _prep(self, t, u):
        u = np.asarray(u, dtype=float)
        if self.d == 1 and (u.ndim == 0 or u.shape[-1] != 1):
            pts = u.reshape(-1, 1)
            shape = u.shape
        else:
            pts = u.reshape(-1, self.d)
            shape = u.shape[:-1]
        tt = np.broadcast_to(np.asarray(t, float), shape).reshape(-1).copy()
        return tt, np.ascontiguousarray(pts), shape

    def _call(self, which, t, u, axis=0):
        tt, pts, shape = self._prep(t, u)
        out = _vectorized(which, self.kinds, self.params, tt, pts, axis)
        return out.reshape(shape) if shape else float(out[0])

    def value(self, t, u):
        return self._call(0, t, u)

    __call__ = value

    def grad(self, t, u, axis=0):
        return self._call(1, t, u, axis)

    def laplacian(self, t, u):
        return self._call(2, t, u)

    def dt(self, t, u):
        return self._call(3, t, u)

    def spatial(self, t=0.0):
        """The map u -> H(t, u), for use as an initial perturbation."""
        return lambda u: self.value(t, u)

    def __repr__(self):
        return f"TestFunction(d={self.d}, terms={self.kinds.size})"
