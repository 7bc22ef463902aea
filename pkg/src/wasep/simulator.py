"""Exact simulation of the WASEP and of its H-tilted version.

Both dynamics share one uniformized event loop: a Poisson clock at rate
(number of particles) x 2d x (dominating per-bond rate) proposes a uniformly
chosen particle and direction, which fires if the target is empty and an
acceptance test against the true rate succeeds.  The base dynamics is the
tilted dynamics with ``H = 0``; both draw the same random numbers, so equal
seeds give equal trajectories when the tilt vanishes.

Time is macroscopic throughout: the microscopic rates are multiplied by n^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import (
    Configuration,
    ScalingParams,
    drift_velocity,
    perturbed_marginals,
    replica_seed,
    sample_bernoulli,
    sample_perturbed,
    site_positions,
    torus_wrap,
)
from .testfn import TestFunction, eval_grad, eval_value

__all__ = [
    "JumpEvent",
    "PathRecord",
    "TiltAccumulator",
    "ThinningError",
    "simulate",
    "simulate_tilted",
    "log_martingale",
    "girsanov_weight",
    "initial_log_likelihood",
    "mdp_estimate",
    "replay",
    "states_at",
    "bond_current",
    "bond_functional",
    "write_jump_log",
    "read_jump_log",
]

_OK, _OVERFLOW, _THINNING, _CONSERVATION, _REFILL = 0, 1, 2, 3, 4
_CHUNK = 1 << 20


class ThinningError(RuntimeError):
    """A tilted rate exceeded the dominating rate used for thinning."""


# ---------------------------------------------------------------------------
# compiled helpers


@njit(cache=True, nogil=True, inline="always")
def _neighbor(idx, axis, sgn, d, S):
    stride = 1
    for _ in range(d - 1 - axis):
        stride *= S
    k = (idx // stride) % S
    kk = k + sgn
    if kk >= S:
        kk -= S
    elif kk < 0:
        kk += S
    return idx + (kk - k) * stride


@njit(cache=True, nogil=True)
def _site_u(idx, d, S, n, L, shift, out):
    rem = idx
    half = S // 2
    for a in range(d - 1, -1, -1):
        k = rem % S
        rem //= S
        x = k if k < half else k - S
        y = (x - shift) / n + 0.5 * L
        y = y - L * math.floor(y / L)
        out[a] = y - 0.5 * L


@njit(cache=True, nogil=True)
def _evolve(occ, pos, d, S, n, L, T, rp, rm, vn, scale, kinds, params, tilted, bound,
            expo, unif, state, counters, times, sites, dirs, check, diag):
    # Proposals pick a particle and a direction, so the only exclusion
    # rejection left is an occupied target.  Random numbers come from the
    # caller's buffers; the loop returns _REFILL when they run low and is
    # resumed from ``state`` / ``counters``.
    N = occ.shape[0]
    P = pos.shape[0]
    nd = 2 * d
    maxrate = max(rp, rm) * math.exp(bound)
    R = P * nd * maxrate
    cap = times.shape[0]
    ne = expo.shape[0]
    nu = unif.shape[0]
    u1 = np.empty(d)
    u2 = np.empty(d)
    t = state[0]
    count = counters[0]
    ie = counters[1]
    iu = counters[2]
    status = _OK
    while True:
        if ie >= ne or iu + 2 > nu:
            status = _REFILL
            break
        if count >= cap:
            status = _OVERFLOW
            break
        tn = t + expo[ie] / R
        ie += 1
        if tn > T:
            t = T
            break
        t = tn
        j = int(unif[iu] * (P * nd))
        iu += 1
        if j >= P * nd:
            j = P * nd - 1
        if d == 1:
            pk = j >> 1
            a = 0
            sgn = 1 if (j & 1) == 0 else -1
            src = pos[pk]
            tgt = src + sgn
            if tgt >= S:
                tgt -= S
            elif tgt < 0:
                tgt += S
        else:
            pk = j // nd
            r = j - pk * nd
            a = r >> 1
            sgn = 1 if (r & 1) == 0 else -1
            src = pos[pk]
            tgt = _neighbor(src, a, sgn, d, S)
        if occ[tgt] != 0:
            continue
        rate = rp if sgn > 0 else rm
        if tilted:
            shift = vn * t
            _site_u(src, d, S, n, L, shift, u1)
            _site_u(tgt, d, S, n, L, shift, u2)
            dF = scale * (eval_value(kinds, params, t, u2) - eval_value(kinds, params, t, u1))
            if dF > bound:
                diag[0] = t
                diag[1] = src
                diag[2] = dF
                status = _THINNING
                break
            rate *= math.exp(dF)
        if rate < maxrate:
            v = unif[iu]
            iu += 1
            if v * maxrate >= rate:
                continue
        if check and (occ[src] != 1 or occ[tgt] != 0):
            diag[0] = t
            status = _CONSERVATION
            break
        occ[src] = 0
        occ[tgt] = 1
        pos[pk] = tgt
        times[count] = t
        sites[count] = src
        dirs[count] = (a + 1) * sgn
        count += 1
        if check:
            tot = 0
            for i in range(N):
                tot += occ[i]
            if tot != P:
                diag[0] = t
                status = _CONSERVATION
                break
    state[0] = t
    counters[0] = count
    counters[1] = ie
    counters[2] = iu
    return status


@njit(cache=True, nogil=True)
def _replay(occ, sites, dirs, d, S, upto):
    for e in range(upto):
        code = dirs[e]
        a = abs(code) - 1
        sgn = 1 if code > 0 else -1
        src = sites[e]
        tgt = _neighbor(src, a, sgn, d, S)
        if occ[src] != 1 or occ[tgt] != 0:
            return e
        occ[src] = 0
        occ[tgt] = 1
    return -1


@njit(cache=True, nogil=True)
def _snapshots(occ, times, sites, dirs, d, S, grid, out):
    e = 0
    m = times.shape[0]
    for g in range(grid.shape[0]):
        while e < m and times[e] <= grid[g]:
            code = dirs[e]
            a = abs(code) - 1
            sgn = 1 if code > 0 else -1
            src = sites[e]
            tgt = _neighbor(src, a, sgn, d, S)
            occ[src] = 0
            occ[tgt] = 1
            e += 1
        out[g, :] = occ


# Bond-wise time integration.  A functional of the form
#   int_0^t sum_b c_b(eta(s)) g_b(s) ds
# only changes its integrand on bond b when a jump touches b, so every bond
# keeps the time of its last update and is integrated lazily when touched.

_GL3_X = math.sqrt(3.0 / 5.0)


@njit(cache=True, nogil=True)
def _bond_integrand(mode, s, x, y, ax, ex, ey, d, S, n, L, vn, scale, rho, rp, rm,
                    kinds, params, ux, uy):
    shift = vn * s
    if mode == 0:
        # exponential-martingale compensator
        if ex == 1 and ey == 0:
            _site_u(x, d, S, n, L, shift, ux)
            _site_u(y, d, S, n, L, shift, uy)
            return rp * math.expm1(scale * (eval_value(kinds, params, s, uy)
                                            - eval_value(kinds, params, s, ux)))
        if ex == 0 and ey == 1:
            _site_u(x, d, S, n, L, shift, ux)
            _site_u(y, d, S, n, L, shift, uy)
            return rm * math.expm1(scale * (eval_value(kinds, params, s, ux)
                                            - eval_value(kinds, params, s, uy)))
        return 0.0
    w = (ex - rho) * (ey - rho)
    _site_u(x, d, S, n, L, shift, ux)
    if mode == 1:
        return w * eval_grad(kinds, params, s, ux, ax)
    _site_u(y, d, S, n, L, shift, uy)
    return w * n * (eval_value(kinds, params, s, uy) - eval_value(kinds, params, s, ux))


@njit(cache=True, nogil=True)
def _gl3(mode, lo, hi, x, y, ax, ex, ey, d, S, n, L, vn, scale, rho, rp, rm,
         kinds, params, ux, uy):
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    f0 = _bond_integrand(mode, c - h * _GL3_X, x, y, ax, ex, ey, d, S, n, L, vn, scale,
                         rho, rp, rm, kinds, params, ux, uy)
    f1 = _bond_integrand(mode, c, x, y, ax, ex, ey, d, S, n, L, vn, scale,
                         rho, rp, rm, kinds, params, ux, uy)
    f2 = _bond_integrand(mode, c + h * _GL3_X, x, y, ax, ex, ey, d, S, n, L, vn, scale,
                         rho, rp, rm, kinds, params, ux, uy)
    return h * (5.0 * f0 + 8.0 * f1 + 5.0 * f2) / 9.0


@njit(cache=True, nogil=True)
def _flush(mode, b, t, occ, last, static, d, S, n, L, vn, scale, rho, rp, rm,
           kinds, params, ux, uy, stack):
    lo0 = last[b]
    last[b] = t
    if t <= lo0:
        return 0.0
    x = b // d
    ax = b - x * d
    y = _neighbor(x, ax, 1, d, S)
    ex = occ[x]
    ey = occ[y]
    if mode == 0 and ex == ey:
        return 0.0
    if static:
        f = _bond_integrand(mode, lo0, x, y, ax, ex, ey, d, S, n, L, vn, scale,
                            rho, rp, rm, kinds, params, ux, uy)
        return f * (t - lo0)
    # adaptive 3-point Gauss: accept a panel when one bisection changes it by <= 1e-9 relative
    total = 0.0
    top = 0
    stack[0, 0] = lo0
    stack[0, 1] = t
    stack[0, 2] = _gl3(mode, lo0, t, x, y, ax, ex, ey, d, S, n, L, vn, scale,
                       rho, rp, rm, kinds, params, ux, uy)
    top = 1
    while top > 0:
        top -= 1
        lo = stack[top, 0]
        hi = stack[top, 1]
        whole = stack[top, 2]
        mid = 0.5 * (lo + hi)
        left = _gl3(mode, lo, mid, x, y, ax, ex, ey, d, S, n, L, vn, scale,
                    rho, rp, rm, kinds, params, ux, uy)
        right = _gl3(mode, mid, hi, x, y, ax, ex, ey, d, S, n, L, vn, scale,
                     rho, rp, rm, kinds, params, ux, uy)
        halves = left + right
        if (abs(whole - halves) <= 1e-9 * abs(halves) or abs(whole - halves) < 1e-300
                or top + 2 > stack.shape[0]):
            total += halves
        else:
            stack[top, 0] = lo
            stack[top, 1] = mid
            stack[top, 2] = left
            stack[top + 1, 0] = mid
            stack[top + 1, 1] = hi
            stack[top + 1, 2] = right
            top += 2
    return total


@njit(cache=True, nogil=True)
def _bond_functional(mode, occ, times, sites, dirs, grid, active, active_list, static,
                     d, S, n, L, vn, scale, rho, rp, rm, kinds, params, out_int, out_jump):
    N = occ.shape[0]
    last = np.zeros(N * d)
    ux = np.empty(d)
    uy = np.empty(d)
    stack = np.empty((64, 3))
    integral = 0.0
    jumpsum = 0.0
    e = 0
    m = times.shape[0]
    for g in range(grid.shape[0]):
        tg = grid[g]
        while e < m and times[e] <= tg:
            t = times[e]
            code = dirs[e]
            a = abs(code) - 1
            sgn = 1 if code > 0 else -1
            src = sites[e]
            tgt = _neighbor(src, a, sgn, d, S)
            for site in (src, tgt):
                for ax in range(d):
                    b1 = site * d + ax
                    if active[b1]:
                        integral += _flush(mode, b1, t, occ, last, static, d, S, n, L, vn,
                                           scale, rho, rp, rm, kinds, params, ux, uy, stack)
                    b2 = _neighbor(site, ax, -1, d, S) * d + ax
                    if active[b2]:
                        integral += _flush(mode, b2, t, occ, last, static, d, S, n, L, vn,
                                           scale, rho, rp, rm, kinds, params, ux, uy, stack)
            if mode == 0:
                shift = vn * t
                _site_u(src, d, S, n, L, shift, ux)
                _site_u(tgt, d, S, n, L, shift, uy)
                jumpsum += scale * (eval_value(kinds, params, t, uy)
                                    - eval_value(kinds, params, t, ux))
            occ[src] = 0
            occ[tgt] = 1
            e += 1
        for k in range(active_list.shape[0]):
            integral += _flush(mode, active_list[k], tg, occ, last, static, d, S, n, L, vn,
                               scale, rho, rp, rm, kinds, params, ux, uy, stack)
        out_int[g] = integral
        out_jump[g] = jumpsum


@njit(cache=True, nogil=True)
def _bond_state_sum(occ, coef, site, d, S):
    # contribution of every bond touching ``site`` under the current state
    tot = 0.0
    for ax in range(d):
        y = _neighbor(site, ax, 1, d, S)
        tot += coef[site * d + ax, 2 * occ[site] + occ[y]]
        x = _neighbor(site, ax, -1, d, S)
        tot += coef[x * d + ax, 2 * occ[x] + occ[site]]
    return tot


@njit(cache=True, nogil=True)
def _static_functional(occ, times, sites, dirs, grid, coef, hsite, d, S, out_int, out_jump):
    # Time-independent bond integrands: the total rate is piecewise constant
    # and only the bonds around the two sites of a jump change.
    N = occ.shape[0]
    rate = 0.0
    for x in range(N):
        for ax in range(d):
            y = _neighbor(x, ax, 1, d, S)
            rate += coef[x * d + ax, 2 * occ[x] + occ[y]]
    integral = 0.0
    jumpsum = 0.0
    tprev = 0.0
    e = 0
    m = times.shape[0]
    for g in range(grid.shape[0]):
        tg = grid[g]
        while e < m and times[e] <= tg:
            t = times[e]
            code = dirs[e]
            a = abs(code) - 1
            sgn = 1 if code > 0 else -1
            src = sites[e]
            tgt = _neighbor(src, a, sgn, d, S)
            integral += rate * (t - tprev)
            tprev = t
            # the bond joining src and tgt is counted from both ends
            b = src * d + a if sgn > 0 else tgt * d + a
            before = (_bond_state_sum(occ, coef, src, d, S) + _bond_state_sum(occ, coef, tgt, d, S)
                      - coef[b, 2 * occ[b // d] + occ[_neighbor(b // d, a, 1, d, S)]])
            occ[src] = 0
            occ[tgt] = 1
            after = (_bond_state_sum(occ, coef, src, d, S) + _bond_state_sum(occ, coef, tgt, d, S)
                     - coef[b, 2 * occ[b // d] + occ[_neighbor(b // d, a, 1, d, S)]])
            rate += after - before
            jumpsum += hsite[tgt] - hsite[src]
            e += 1
        integral += rate * (tg - tprev)
        tprev = tg
        out_int[g] = integral
        out_jump[g] = jumpsum


@njit(cache=True, nogil=True)
def _hermite(C, D, row, st, r, breaks, M):
    # cumulative integral at time r from the graded node tables
    j = 0
    while j + 2 < breaks.shape[0] and r > breaks[j + 1]:
        j += 1
    a = breaks[j]
    b = breaks[j + 1]
    q = (b - r) / (b - a)
    w = 1.0 - math.sqrt(q if q > 0.0 else 0.0)
    x = w * M
    k = int(x)
    if k > M - 1:
        k = M - 1
    s = x - k
    h = 1.0 / M
    i = j * (M + 1) + k
    s2 = s * s
    s3 = s2 * s
    return ((2 * s3 - 3 * s2 + 1) * C[row, i, st] + (s3 - 2 * s2 + s) * h * D[row, i, st]
            + (-2 * s3 + 3 * s2) * C[row, i + 1, st] + (s3 - s2) * h * D[row, i + 1, st])


@njit(cache=True, nogil=True)
def _tabulated_functional(occ, times, sites, dirs, grid, rows, C, D, breaks, M, d, S,
                          jump_h, out_int, out_jump):
    # Bond integrands that depend on time but not on the frame: the integral
    # over each constant-state stretch is a difference of cumulative tables.
    N = occ.shape[0]
    last = np.zeros(N * d)
    integral = 0.0
    jumpsum = 0.0
    e = 0
    m = times.shape[0]
    for g in range(grid.shape[0]):
        tg = grid[g]
        while e < m and times[e] <= tg:
            t = times[e]
            code = dirs[e]
            a = abs(code) - 1
            sgn = 1 if code > 0 else -1
            src = sites[e]
            tgt = _neighbor(src, a, sgn, d, S)
            for site in (src, tgt):
                for ax in range(d):
                    for b in (site * d + ax, _neighbor(site, ax, -1, d, S) * d + ax):
                        row = rows[b]
                        if row < 0 or last[b] >= t:
                            continue
                        x = b // d
                        st = 2 * occ[x] + occ[_neighbor(x, b - x * d, 1, d, S)]
                        integral += (_hermite(C, D, row, st, t, breaks, M)
                                     - _hermite(C, D, row, st, last[b], breaks, M))
                        last[b] = t
            jumpsum += jump_h[2 * e + 1] - jump_h[2 * e]
            occ[src] = 0
            occ[tgt] = 1
            e += 1
        for b in range(N * d):
            row = rows[b]
            if row < 0 or last[b] >= tg:
                continue
            x = b // d
            st = 2 * occ[x] + occ[_neighbor(x, b - x * d, 1, d, S)]
            integral += _hermite(C, D, row, st, tg, breaks, M) - _hermite(C, D, row, st, last[b], breaks, M)
            last[b] = tg
        out_int[g] = integral
        out_jump[g] = jumpsum


@njit(cache=True, nogil=True)
def _occupation(occ, times, sites, dirs, d, S, window, table, ftilde, grid, out):
    w = window.shape[0]
    idx = 0
    for i in range(w):
        idx |= occ[window[i]] << i
    acc = 0.0
    tprev = 0.0
    e = 0
    m = times.shape[0]
    for g in range(grid.shape[0]):
        tg = grid[g]
        while e < m and times[e] <= tg:
            t = times[e]
            code = dirs[e]
            a = abs(code) - 1
            sgn = 1 if code > 0 else -1
            src = sites[e]
            tgt = _neighbor(src, a, sgn, d, S)
            acc += (t - tprev) * (table[idx] - ftilde)
            tprev = t
            occ[src] = 0
            occ[tgt] = 1
            idx = 0
            for i in range(w):
                idx |= occ[window[i]] << i
            e += 1
        acc += (tg - tprev) * (table[idx] - ftilde)
        tprev = tg
        out[g] = acc


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class JumpEvent:
    time: float
    site: int
    direction: int  # +-(axis + 1)


@dataclass
class TiltAccumulator:
    log_mart: float = 0.0
    last_update_time: float = 0.0


@dataclass
class PathRecord:
    """Jump log plus observable samples of one trajectory on [0, T]."""

    params: ScalingParams
    initial: Configuration
    times: np.ndarray
    sites: np.ndarray
    dirs: np.ndarray
    final: Configuration
    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    series: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def num_jumps(self) -> int:
        return int(self.times.shape[0])

    def events(self):
        for t, s, dd in zip(self.times, self.sites, self.dirs):
            yield JumpEvent(float(t), int(s), int(dd))

    def __eq__(self, other):
        if not isinstance(other, PathRecord):
            return NotImplemented
        return (
            self.params == other.params
            and self.initial == other.initial
            and self.final == other.final
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.sites, other.sites)
            and np.array_equal(self.dirs, other.dirs)
            and np.array_equal(self.grid, other.grid)
            and self.series.keys() == other.series.keys()
            and all(np.array_equal(self.series[k], other.series[k]) for k in self.series)
        )


# ---------------------------------------------------------------------------
# simulation


def _default_grid(T, grid):
    if grid is None:
        return np.linspace(0.0, T, 11)
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or np.any(np.diff(g) < 0) or g[0] < 0 or g[-1] > T:
        raise ValueError("observation grid must be sorted within [0, T]")
    return g


def _streams(seed):
    """Independent generators for the initial state, clock gaps and uniforms."""
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(c) for c in ss.spawn(3)]


def _run(params, config0, H, seed, check):
    if not config0.matches(params):
        raise ValueError("configuration does not live on the lattice of params")
    p = params
    tilted = H is not None and not H.is_zero
    if tilted:
        if H.d != p.d:
            raise ValueError("test function dimension does not match params.d")
        _check_support(H, p)
        bound = 1.05 * p.tilt_scale * H.grad_bound(p.T) * math.sqrt(p.d) / p.n + 1e-12
        kinds, par = H.kinds, H.params
    else:
        bound = 0.0
        kinds, par = np.zeros(0, np.int64), np.zeros((0, 10))
    occ = config0.occupancy.copy()
    pos = np.flatnonzero(occ).astype(np.int64)
    P = pos.shape[0]
    _, rng_e, rng_u = _streams(seed)
    proposals = p.T * P * 2 * p.d * max(p.rate_plus, p.rate_minus) * math.exp(bound)
    cap = int(0.6 * proposals + 10 * math.sqrt(proposals + 1) + 256)
    times = np.empty(cap)
    sites = np.empty(cap, dtype=np.int64)
    dirs = np.empty(cap, dtype=np.int8)
    chunk = int(min(_CHUNK, proposals * 1.05 + 64))
    expo = rng_e.standard_exponential(chunk)
    unif = rng_u.random(2 * chunk)
    state = np.zeros(1)
    counters = np.zeros(3, dtype=np.int64)
    diag = np.zeros(3)
    if 0 < P < p.num_sites:
        while True:
            status = _evolve(
                occ, pos, p.d, p.side, float(p.n), float(p.L_macro), float(p.T), p.rate_plus,
                p.rate_minus, drift_velocity(p), p.tilt_scale, kinds, par, tilted, bound,
                expo, unif, state, counters, times, sites, dirs, check, diag,
            )
            if status == _OK:
                break
            if status == _REFILL:
                expo = np.concatenate([expo[counters[1]:], rng_e.standard_exponential(_CHUNK)])
                unif = np.concatenate([unif[counters[2]:], rng_u.random(2 * _CHUNK)])
                counters[1] = counters[2] = 0
            elif status == _OVERFLOW:
                cap *= 2
                times = np.resize(times, cap)
                sites = np.resize(sites, cap)
                dirs = np.resize(dirs, cap)
            elif status == _THINNING:
                raise ThinningError(
                    f"tilt exponent {diag[2]:.3e} exceeds thinning bound {bound:.3e} "
                    f"at t={diag[0]:.6g}, site {int(diag[1])}"
                )
            else:
                raise AssertionError(f"particle number changed at t={diag[0]:.6g}")
    count = int(counters[0])
    final = Configuration(occ, p.d, p.side)
    return times[:count].copy(), sites[:count].copy(), dirs[:count].copy(), final


def _check_support(H, params):
    r = H.support_radius(0.0)
    if r >= params.L_macro / 2.0:
        raise ValueError(
            f"test function support radius {r:.3g} does not fit in half the torus "
            f"(L_macro/2 = {params.L_macro / 2})"
        )


def _observe(path, observers, grid):
    if not observers:
        return {}
    snaps = states_at(path, grid)
    return {
        name: np.array([obs(snaps[i], grid[i]) for i in range(grid.shape[0])])
        for name, obs in observers.items()
    }


def simulate(params: ScalingParams, config0: Configuration | None = None, observers=None,
             seed: int = 0, grid=None, check: bool = False) -> PathRecord:
    """Simulate the base dynamics L_n on [0, T].

    Parameters
    ----------
    config0 : Configuration, optional
        Initial state; drawn from the Bernoulli(rho) measure with ``seed``
        when omitted.
    observers : dict of name -> callable(occupancy, t), optional
        Evaluated on the exact state at each time of ``grid``.
    check : bool
        Recount particles after every jump and fail loudly on a mismatch.
    """
    if config0 is None:
        config0 = sample_bernoulli(params, _streams(seed)[0])
    times, sites, dirs, final = _run(params, config0, None, seed, check)
    g = _default_grid(params.T, grid)
    path = PathRecord(params, config0.copy(), times, sites, dirs, final, g, {}, seed)
    path.series = _observe(path, observers, g)
    return path


def simulate_tilted(params: ScalingParams, H: TestFunction, phi=None, seed: int = 0,
                    observers=None, grid=None, config0: Configuration | None = None,
                    check: bool = False, weight: bool = True):
    """Simulate the tilted dynamics L_n^H from the perturbed product measure.

    Returns the path and a :class:`TiltAccumulator` holding log M_T(H) on it,
    or ``None`` in place of the accumulator when ``weight`` is False.
    With ``H = 0`` and ``phi = None`` this reproduces :func:`simulate`
    exactly for the same seed.
    """
    if config0 is None:
        if phi is None:
            config0 = sample_bernoulli(params, _streams(seed)[0])
        else:
            config0 = sample_perturbed(params, phi, _streams(seed)[0])
    times, sites, dirs, final = _run(params, config0, H, seed, check)
    g = _default_grid(params.T, grid)
    path = PathRecord(params, config0.copy(), times, sites, dirs, final, g, {}, seed)
    path.series = _observe(path, observers, g)
    if not weight:
        return path, None
    acc = TiltAccumulator(log_martingale(path, H, params) if H is not None else 0.0, params.T)
    return path, acc


def replay(path: PathRecord) -> Configuration:
    """Re-apply the jump log to the initial state; fails on an illegal jump."""
    occ = path.initial.occupancy.copy()
    bad = _replay(occ, path.sites, path.dirs, path.params.d, path.params.side, path.num_jumps)
    if bad >= 0:
        raise ValueError(f"jump {bad} violates the exclusion rule")
    return Configuration(occ, path.params.d, path.params.side)


def states_at(path: PathRecord, grid) -> np.ndarray:
    """Occupancies at each grid time (right-continuous), shape (len(grid), N)."""
    g = np.asarray(grid, dtype=float)
    out = np.empty((g.shape[0], path.params.num_sites), dtype=np.int8)
    _snapshots(path.initial.occupancy.copy(), path.times, path.sites, path.dirs,
               path.params.d, path.params.side, g, out)
    return out


def bond_current(path: PathRecord, site: int = 0, axis: int = 0) -> int:
    """Net number of jumps across the bond (site, site + e_axis)."""
    p = path.params
    right = np.count_nonzero((path.sites == site) & (path.dirs == axis + 1))
    nbr = int(_neighbor(site, axis, 1, p.d, p.side))
    left = np.count_nonzero((path.sites == nbr) & (path.dirs == -(axis + 1)))
    return int(right - left)


# ---------------------------------------------------------------------------
# change of measure


def _active_bonds(H: TestFunction, params: ScalingParams):
    p = params
    pos = site_positions(p).astype(float)
    vn = drift_velocity(p)
    R = H.support_radius(p.T)
    n_t = 1 if vn == 0 else int(min(2000, 50 + abs(vn) * p.T / p.n * 20 * p.n))
    ts = np.linspace(0.0, p.T, n_t)
    step = abs(vn) * (ts[1] - ts[0]) / p.n if n_t > 1 else 0.0
    margin = (step + 2.0 / p.n) * math.sqrt(p.d)
    near = np.zeros(p.num_sites, dtype=bool)
    for t in ts:
        u = torus_wrap((pos - vn * t) / p.n, p.L_macro)
        near |= np.linalg.norm(u, axis=1) <= R + margin
    active = np.zeros(p.num_sites * p.d, dtype=np.bool_)
    for ax in range(p.d):
        nbr = np.array([_neighbor(i, ax, -1, p.d, p.side) for i in np.flatnonzero(near)],
                       dtype=np.int64)
        active[np.flatnonzero(near) * p.d + ax] = True
        if nbr.size:
            active[nbr * p.d + ax] = True
    return active, np.flatnonzero(active).astype(np.int64)


def _static_tables(H: TestFunction, p: ScalingParams, mode: int):
    """Per-bond integrand for each of the four states (eta_x, eta_y) = 00, 01, 10, 11."""
    u = torus_wrap(site_positions(p) / p.n, p.L_macro)
    h = H.value(0.0, u if p.d > 1 else u[:, 0])
    hsite = p.tilt_scale * h if mode == 0 else np.zeros_like(h)
    coef = np.zeros((p.num_sites * p.d, 4))
    idx = np.arange(p.num_sites)
    grid_shape = (p.side,) * p.d
    for ax in range(p.d):
        y = np.roll(idx.reshape(grid_shape), -1, axis=ax).reshape(-1)
        rows = idx * p.d + ax
        if mode == 0:
            coef[rows, 2] = p.rate_plus * np.expm1(hsite[y] - hsite)
            coef[rows, 1] = p.rate_minus * np.expm1(hsite - hsite[y])
            continue
        if mode == 1:
            g = H.grad(0.0, u if p.d > 1 else u[:, 0], axis=ax)
        else:
            g = p.n * (h[y] - h)
        for state in range(4):
            ex, ey = state >> 1, state & 1
            coef[rows, state] = (ex - p.rho) * (ey - p.rho) * g
    return coef, hsite


TIME_NODES = 128  # graded nodes per smooth time segment of a tabulated bond integrand
_GL4 = np.polynomial.legendre.leggauss(4)


def _time_tables(H: TestFunction, p: ScalingParams, mode: int, active_list, M=None):
    """Cumulative time integrals of every active bond integrand, per bond state.

    The time axis is cut at 0, T and at the end time of every heat term, where
    the integrand behaves like a square root.  On each piece [a, b] the nodes
    are r = b - (b - a)(1 - w)^2 for w uniform, which turns that square root
    into a smooth function of w; tables hold C(w) and dC/dw for cubic Hermite
    interpolation.
    """
    M = TIME_NODES if M is None else M
    ends = [q[1] for k, q in zip(H.kinds, H.params) if k == 2 and 0.0 < q[1] < p.T]
    breaks = np.unique(np.concatenate([[0.0, p.T], ends]))
    pos = site_positions(p)
    x = active_list // p.d
    ax = active_list - x * p.d
    shape = (p.side,) * p.d
    idx = np.arange(p.num_sites).reshape(shape)
    y = np.empty_like(x)
    for a in range(p.d):
        nb = np.roll(idx, -1, axis=a).reshape(-1)
        y[ax == a] = nb[x[ax == a]]
    ux = torus_wrap(pos[x] / p.n, p.L_macro)
    uy = torus_wrap(pos[y] / p.n, p.L_macro)
    if p.d == 1:
        ux, uy = ux[:, 0], uy[:, 0]
    ex = np.array([0, 0, 1, 1]) - p.rho
    ey = np.array([0, 1, 0, 1]) - p.rho

    def f(r):
        # integrand at the times r (1-d array), shape (len(r), bonds, 4)
        rr = np.repeat(r, x.size)
        tile = lambda u: np.tile(u, (r.size,) + (1,) * (u.ndim - 1))  # noqa: E731
        hx = H.value(rr, tile(ux)).reshape(r.size, x.size)
        out = np.zeros((r.size, x.size, 4))
        if mode == 0:
            hy = H.value(rr, tile(uy)).reshape(r.size, x.size)
            out[:, :, 2] = p.rate_plus * np.expm1(p.tilt_scale * (hy - hx))
            out[:, :, 1] = p.rate_minus * np.expm1(p.tilt_scale * (hx - hy))
            return out
        if mode == 1:
            g = np.empty((r.size, x.size))
            for a in range(p.d):
                sel = ax == a
                g[:, sel] = H.grad(np.repeat(r, sel.sum()), tile(ux[sel]), axis=a).reshape(r.size, -1)
        else:
            hy = H.value(rr, tile(uy)).reshape(r.size, x.size)
            g = p.n * (hy - hx)
        return g[:, :, None] * (ex * ey)[None, None, :]

    nseg = breaks.size - 1
    gx, gw = _GL4
    w = np.arange(M + 1) / M
    # Gauss points inside each node interval, in the graded variable
    wq = (w[:-1, None] + 0.5 * (gx[None, :] + 1.0) / M).reshape(-1)
    C = np.zeros((x.size, nseg * (M + 1), 4))
    D = np.zeros_like(C)
    base = np.zeros((x.size, 4))
    for j in range(nseg):
        a, b = breaks[j], breaks[j + 1]
        fn = f(b - (b - a) * (1.0 - w) ** 2) * (2.0 * (b - a) * (1.0 - w))[:, None, None]
        fq = f(b - (b - a) * (1.0 - wq) ** 2) * (2.0 * (b - a) * (1.0 - wq))[:, None, None]
        cells = 0.5 / M * np.einsum("kqbs,q->kbs", fq.reshape(M, gx.size, x.size, 4), gw)
        cum = base[None] + np.concatenate([np.zeros((1, x.size, 4)), np.cumsum(cells, axis=0)])
        C[:, j * (M + 1):(j + 1) * (M + 1), :] = cum.transpose(1, 0, 2)
        D[:, j * (M + 1):(j + 1) * (M + 1), :] = fn.transpose(1, 0, 2)
        base = cum[-1]
    rows = np.full(p.num_sites * p.d, -1, dtype=np.int64)
    rows[active_list] = np.arange(active_list.size)
    return rows, C, D, breaks, M


def _jump_values(H: TestFunction, path: PathRecord):
    """tilt_scale * H at (time, source) and (time, target) of every jump."""
    p = path.params
    if path.num_jumps == 0:
        return np.zeros(0)
    pos = site_positions(p)
    a = np.abs(path.dirs.astype(np.int64)) - 1
    sgn = np.sign(path.dirs).astype(np.int64)
    tgt_pos = pos[path.sites].copy()
    tgt_pos[np.arange(path.num_jumps), a] += sgn
    u_src = torus_wrap(pos[path.sites] / p.n, p.L_macro)
    u_tgt = torus_wrap(tgt_pos / p.n, p.L_macro)
    if p.d == 1:
        u_src, u_tgt = u_src[:, 0], u_tgt[:, 0]
    out = np.empty(2 * path.num_jumps)
    out[0::2] = H.value(path.times, u_src)
    out[1::2] = H.value(path.times, u_tgt)
    return p.tilt_scale * out



def bond_functional(path: PathRecord, H: TestFunction, mode: int, grid=None):
    """Integrate a bond functional along a recorded path.

    ``mode`` 0 gives (compensator integral, jump sum) of the exponential
    martingale; modes 1 and 2 give the raw time integral of
    sum_b (eta_x - rho)(eta_y - rho) dH, with the continuous and the discrete
    gradient respectively.  Values are cumulative at each grid time.
    """
    p = path.params
    g = np.array([p.T]) if grid is None else np.asarray(grid, dtype=float)
    out_int = np.zeros(g.shape[0])
    out_jump = np.zeros(g.shape[0])
    if H is None or H.is_zero:
        return out_int, out_jump
    if H.d != p.d:
        raise ValueError("test function dimension does not match path lattice")
    _check_support(H, p)
    if H.is_static() and drift_velocity(p) == 0.0:
        coef, hsite = _static_tables(H, p, mode)
        _static_functional(path.initial.occupancy.copy(), path.times, path.sites, path.dirs, g,
                           coef, hsite, p.d, p.side, out_int, out_jump)
        return out_int, out_jump
    active, active_list = _active_bonds(H, p)
    if drift_velocity(p) == 0.0:
        rows, C, D, breaks, M = _time_tables(H, p, mode, active_list)
        jump_h = _jump_values(H, path) if mode == 0 else np.zeros(2 * path.num_jumps)
        _tabulated_functional(path.initial.occupancy.copy(), path.times, path.sites, path.dirs,
                              g, rows, C, D, breaks, M, p.d, p.side, jump_h, out_int, out_jump)
        return out_int, out_jump
    static = False
    _bond_functional(
        mode, path.initial.occupancy.copy(), path.times, path.sites, path.dirs, g, active,
        active_list, static, p.d, p.side, float(p.n), float(p.L_macro), drift_velocity(p),
        p.tilt_scale, p.rho, p.rate_plus, p.rate_minus, H.kinds, H.params, out_int, out_jump,
    )
    return out_int, out_jump


def log_martingale(path: PathRecord, H: TestFunction, params: ScalingParams | None = None) -> float:
    """Exact log M_T(H) on a recorded path.

    Uses the jump form of the Feynman-Kac exponent: the sum of the increments
    of (a_n^2/n^d) <mu_s, H_s> across jumps minus the time integral of
    sum_b c_b(eta) (exp(dF_b) - 1) over bonds b.  The drift of H between
    jumps cancels between the two boundary terms and the d/ds part of the
    compensator.
    """
    if params is not None and params != path.params:
        raise ValueError("path was generated with different parameters")
    comp, jumps = bond_functional(path, H, 0)
    return float(jumps[-1] - comp[-1])


def initial_log_likelihood(config: Configuration, phi, params: ScalingParams) -> float:
    """log d nu^{n,phi} / d nu_rho evaluated at ``config``."""
    if phi is None:
        return 0.0
    p = perturbed_marginals(params, phi)
    rho = params.rho
    eta = config.occupancy.astype(bool)
    with np.errstate(divide="ignore"):
        occupied = np.log(p[eta] / rho)
        empty = np.log((1.0 - p[~eta]) / (1.0 - rho))
    return float(occupied.sum() + empty.sum())


def girsanov_weight(path: PathRecord, H: TestFunction, phi, params: ScalingParams | None = None) -> float:
    """log dP_{H,phi} / dP_rho on a recorded path."""
    p = path.params if params is None else params
    lm = log_martingale(path, H, p) if H is not None else 0.0
    return lm + initial_log_likelihood(path.initial, phi, p)


def mdp_estimate(event, params: ScalingParams, tilt=None, replicas: int = 1000, seed: int = 0,
                 grid=None):
    """Estimate (n^d / a_n^2) log P(event) by plain or importance sampling.

    Parameters
    ----------
    event : callable(PathRecord) -> bool
    tilt : (TestFunction, phi) or None
        When given, paths are drawn from P_{H,phi} and reweighted by
        exp(-girsanov_weight).

    Returns
    -------
    dict with ``scaled_log_prob``, ``stderr``, ``prob``, ``hits``,
    ``replicas`` and ``lattice_side``.  Zero hits give ``-inf``.
    """
    if replicas < 100:
        raise ValueError("mdp_estimate needs at least 100 replicas")
    vals = np.empty(replicas)
    hits = 0
    for k in range(replicas):
        s = replica_seed(seed, k)
        if tilt is None:
            path = simulate(params, seed=s, grid=grid)
            w = 1.0
        else:
            H, phi = tilt
            path, _ = simulate_tilted(params, H, phi, seed=s, grid=grid, weight=False)
            w = math.exp(-girsanov_weight(path, H, phi, params))
        hit = bool(event(path))
        hits += hit
        vals[k] = w if hit else 0.0
    prob = float(vals.mean())
    scale = params.n ** params.d / params.a_n ** 2
    out = {"hits": hits, "replicas": replicas, "prob": prob, "lattice_side": params.side}
    if hits == 0 or prob <= 0:
        out.update(scaled_log_prob=-math.inf, stderr=math.inf)
        return out
    se_p = vals.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else 0.0
    out.update(scaled_log_prob=scale * math.log(prob), stderr=scale * se_p / prob, prob_stderr=se_p)
    return out


# ---------------------------------------------------------------------------
# binary jump log: little-endian f64 time, u64 site, i8 direction

_JUMP_DTYPE = np.dtype([("time", "<f8"), ("site", "<u8"), ("dir", "i1")])


def write_jump_log(path: PathRecord, fh) -> None:
    rec = np.empty(path.num_jumps, dtype=_JUMP_DTYPE)
    rec["time"] = path.times
    rec["site"] = path.sites
    rec["dir"] = path.dirs
    fh.write(rec.tobytes())


def read_jump_log(fh):
    rec = np.frombuffer(fh.read(), dtype=_JUMP_DTYPE)
    return rec["time"].copy(), rec["site"].astype(np.int64), rec["dir"].astype(np.int8)
