import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from wasep.model import (
    Configuration,
    MarginalError,
    ScalingParams,
    chi,
    drift_velocity,
    replica_seed,
    sample_bernoulli,
    site_positions,
    torus_wrap,
)
from wasep.observables import (
    LocalFunction,
    bernoulli_kl,
    field_series,
    fluctuation_field,
    ftilde,
    occupation_time,
    q_n_integral,
    q_n_observable,
    relative_entropy_initial,
)
from wasep.simulator import simulate, states_at
from wasep.testfn import TestFunction


# ftilde -----------------------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.1, 0.5, 0.83])
def test_ftilde_examples(rho):
    assert ftilde(LocalFunction.occupation(), rho) == pytest.approx(rho)
    assert ftilde(LocalFunction([0, 1], lambda e: e[0] * e[1]), rho) == pytest.approx(rho ** 2)
    assert ftilde(LocalFunction([0, 1], lambda e: e[0] * (1 - e[1])), rho) == pytest.approx(chi(rho))
    assert ftilde(LocalFunction.constant(2.5), rho) == 2.5


@pytest.mark.parametrize("w", [1, 3, 6])
def test_ftilde_matches_monte_carlo(w):
    rng = np.random.default_rng(w)
    table = rng.normal(size=2 ** w)
    f = LocalFunction(np.arange(w), lambda e: table[int(np.sum(e << np.arange(w)))])
    rho = 0.37
    m = 100_000
    sample = (rng.random((m, w)) < rho).astype(np.int64)
    vals = table[(sample << np.arange(w)).sum(axis=1)]
    assert abs(vals.mean() - ftilde(f, rho)) <= 3 * vals.std() / math.sqrt(m)


def test_window_limits():
    with pytest.raises(ValueError, match="exceeds the limit"):
        LocalFunction(np.arange(21), lambda e: 0.0)
    f = LocalFunction(np.arange(10), lambda e: e[0])
    with pytest.raises(ValueError, match="exceeds the lattice"):
        f.sites(ScalingParams(n=4, L_macro=4))


# fluctuation field ------------------------------------------------------------------------

def test_field_of_full_configuration():
    p = ScalingParams(n=16, rho=0.3, theta=0.75)
    H = TestFunction.bump(1, amplitude=1.0, radius=1.3)
    ones = Configuration(np.ones(p.num_sites, np.int8), 1, p.side)
    u = site_positions(p)[:, 0] / p.n
    expected = 0.7 / p.a_n * H.value(0.0, u).sum()
    assert fluctuation_field(ones, H, 0.0, p) == pytest.approx(expected, rel=1e-13)
    assert fluctuation_field(ones, TestFunction.zero(), 0.0, p) == 0.0


def test_field_uses_moving_frame():
    p = ScalingParams(n=16, alpha=1.0, beta=1.0, rho=0.25, theta=0.75)
    vn = drift_velocity(p)
    assert vn != 0
    H = TestFunction.bump(1, amplitude=1.0, radius=1.0)
    c = sample_bernoulli(p, 4)
    t = 0.37
    u = torus_wrap((site_positions(p)[:, 0] - vn * t) / p.n, p.L_macro)
    expected = np.dot(c.occupancy - 0.25, H.value(t, u)) / p.a_n
    assert fluctuation_field(c, H, t, p) == pytest.approx(expected, rel=1e-12)


def test_field_support_too_large():
    p = ScalingParams(n=8, L_macro=2)
    with pytest.raises(ValueError):
        fluctuation_field(sample_bernoulli(p, 0), TestFunction.bump(1, radius=1.0), 0.0, p)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_field_is_linear(a, b, seed):
    p = ScalingParams(n=16, theta=0.75)
    H1 = TestFunction.bump(1, amplitude=1.0, radius=1.5)
    H2 = TestFunction.bump(1, amplitude=0.5, radius=0.7, center=0.4)
    c = sample_bernoulli(p, seed)
    lhs = fluctuation_field(c, a * H1 + b * H2, 0.0, p)
    rhs = a * fluctuation_field(c, H1, 0.0, p) + b * fluctuation_field(c, H2, 0.0, p)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_initial_field_variance():
    p = ScalingParams(n=32, theta=0.75, rho=0.4)
    H = TestFunction.bump(1, amplitude=1.0, radius=1.5)
    vals = np.array([fluctuation_field(sample_bernoulli(p, replica_seed(8, k)), H, 0.0, p)
                     for k in range(10_000)])
    l2 = integrate.quad(lambda u: H.value(0.0, u) ** 2, -1.5, 1.5)[0]
    target = p.n / p.a_n ** 2 * chi(0.4) * l2
    m4 = np.mean((vals - vals.mean()) ** 4)
    se = math.sqrt((m4 - vals.var() ** 2) / vals.size)
    assert abs(vals.var(ddof=1) - target) <= 3 * se + 0.01 * target  # Riemann sum slack


def test_field_series_matches_states():
    p = ScalingParams(n=8, theta=0.75)
    H = TestFunction.bump(1, radius=1.0)
    path = simulate(p, seed=3)
    g = np.array([0.0, 0.25, 1.0])
    series = field_series(path, H, g)
    snaps = states_at(path, g)
    assert [s.value for s in series] == [fluctuation_field(snaps[i], H, g[i], p) for i in range(3)]


# occupation time ------------------------------------------------------------------------------

def test_occupation_of_constant_is_zero():
    p = ScalingParams(n=8)
    traj = occupation_time(simulate(p, seed=1), LocalFunction.constant(0.7))
    assert np.all(traj.values == 0.0)


def test_occupation_of_frozen_full_lattice():
    p = ScalingParams(n=16, rho=0.3, theta=0.75)
    path = simulate(p, config0=sample_bernoulli(p, 0, rho=1.0), seed=0)
    g = np.linspace(0, 1, 7)
    traj = occupation_time(path, grid=g)
    assert np.allclose(traj.values, p.n / p.a_n * 0.7 * g, rtol=1e-14, atol=0)
    assert traj.at(g[3]) == traj.values[3]
    with pytest.raises(KeyError):
        traj.at(0.123)


def test_occupation_independent_of_grid():
    p = ScalingParams(n=16, alpha=1.0)
    path = simulate(p, seed=2)
    coarse = occupation_time(path, grid=np.linspace(0, 1, 3))
    fine = occupation_time(path, grid=np.linspace(0, 1, 21))
    assert coarse.values[0] == 0.0
    assert coarse.values[-1] == fine.values[-1]


def test_occupation_matches_direct_integration():
    p = ScalingParams(n=8, alpha=1.0, rho=0.4)
    f = LocalFunction([-1, 0, 2], lambda e: e[0] * e[1] - 0.5 * e[2])
    path = simulate(p, seed=7)
    idx = [p.side - 1, 0, 2]
    occ = path.initial.occupancy.astype(int).copy()
    fbar = 0.4 * 0.4 - 0.5 * 0.4
    total, t0 = 0.0, 0.0
    for t, s, d in zip(path.times, path.sites, path.dirs):
        e = occ[idx]
        total += (t - t0) * (e[0] * e[1] - 0.5 * e[2] - fbar)
        occ[s], occ[(s + d) % p.side] = 0, 1
        t0 = t
    e = occ[idx]
    total += (p.T - t0) * (e[0] * e[1] - 0.5 * e[2] - fbar)
    traj = occupation_time(path, f, grid=[0.0, p.T])
    assert traj.values[-1] == pytest.approx(p.n / p.a_n * total, rel=1e-11, abs=1e-12)


# quadratic field Q^n -------------------------------------------------------------------------

def test_q_n_vanishes_without_asymmetry():
    p = ScalingParams(n=8, alpha=0.0)
    assert q_n_observable(sample_bernoulli(p, 1), TestFunction.bump(1), 0.0, p) == 0.0


@pytest.mark.parametrize("rho_conf", [0.0, 1.0])
def test_q_n_discrete_telescopes_on_constant_configurations(rho_conf):
    p = ScalingParams(n=16, d=2, alpha=1.0, beta=1.0, rho=0.3, theta=1.5, L_macro=4)
    H = TestFunction.bump(2, amplitude=1.0, radius=1.2, center=[0.2, -0.1])
    c = sample_bernoulli(p, 0, rho=rho_conf)
    val = q_n_observable(c, H, 0.0, p, discrete=True)
    cont = q_n_observable(c, H, 0.0, p)
    scale = p.alpha * p.n ** (1 - p.beta) / (p.d * p.a_n) * p.num_sites
    assert abs(val) <= 1e-12 * scale
    assert abs(cont) <= 1e-3 * scale  # Riemann sum of a gradient


def test_q_n_integral_matches_stepwise_sum():
    p = ScalingParams(n=8, alpha=1.0, beta=1.0, theta=0.75)
    H = TestFunction.bump(1, amplitude=1.0, radius=1.5)
    path = simulate(p, seed=12)
    for discrete in (False, True):
        snaps = states_at(path, np.concatenate([[0.0], path.times]))
        edges = np.concatenate([[0.0], path.times, [p.T]])
        vals = np.array([q_n_observable(s, H, 0.0, p, discrete) for s in snaps])
        expected = np.sum(vals * np.diff(edges))
        res = q_n_integral(path, H, grid=[0.0, 0.5, p.T], discrete=discrete)
        assert res["terminal"] == pytest.approx(expected, rel=1e-10, abs=1e-12)
        assert res["sup"] == pytest.approx(np.max(np.abs(res["values"])))
        assert res["values"][0] == 0.0


# relative entropy -------------------------------------------------------------------------------

def test_entropy_of_zero_perturbation():
    assert relative_entropy_initial(lambda u: np.zeros_like(u), ScalingParams(n=8)) == 0.0
    assert relative_entropy_initial(None, ScalingParams(n=8)) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.3, 1.5))
def test_entropy_nonnegative(amp, radius):
    p = ScalingParams(n=16, theta=0.75)
    phi = TestFunction.bump(1, amplitude=amp, radius=radius).spatial(0.0)
    h = relative_entropy_initial(phi, p)
    assert h >= 0.0
    if amp == 0.0:
        assert h == 0.0


def test_entropy_single_site_is_bernoulli_kl():
    p = ScalingParams(n=16, rho=0.3, theta=0.75)
    A = 2.0
    phi = lambda u: np.where(np.abs(np.asarray(u)) < 1e-12, A, 0.0)  # noqa: E731
    q = 0.3 + 0.21 * p.a_n / p.n * A
    closed = q * math.log(q / 0.3) + (1 - q) * math.log((1 - q) / 0.7)
    assert relative_entropy_initial(phi, p) == pytest.approx(closed, rel=1e-13)
    assert bernoulli_kl(q, 0.3) == pytest.approx(closed, rel=1e-13)


def test_entropy_scales_like_speed():
    # H(nu^phi | nu) ~ (a_n^2 / n) chi ||phi||^2 / 2
    H = TestFunction.bump(1, amplitude=1.0, radius=1.5)
    l2 = integrate.quad(lambda u: H.value(0.0, u) ** 2, -1.5, 1.5)[0]
    ratios = {}
    for n in (64, 256):
        p = ScalingParams(n=n, rho=0.4, theta=0.75)
        ratios[n] = relative_entropy_initial(H.spatial(0.0), p) / p.speed
    for r in ratios.values():
        assert r == pytest.approx(0.5 * chi(0.4) * l2, rel=0.05)
    # K_0: the sup over an amplitude sweep bounds the entropy at both sizes
    amps = np.linspace(0.25, 2.0, 8)
    for n in (64, 256):
        p = ScalingParams(n=n, rho=0.4, theta=0.75)
        k0 = max(relative_entropy_initial((a * H).spatial(0.0), p) / p.speed for a in amps)
        assert k0 <= 0.5 * chi(0.4) * l2 * 4.0 * 1.1


def test_entropy_rejects_bad_marginals():
    p = ScalingParams(n=8, theta=0.75)
    with pytest.raises(MarginalError):
        relative_entropy_initial(lambda u: np.full_like(u, 100.0), p)


def test_local_function_call():
    f = LocalFunction([0, 1, 2], lambda e: e[0] + 2 * e[1] + 4 * e[2])
    for bits in itertools.product([0, 1], repeat=3):
        assert f(np.array(bits)) == bits[0] + 2 * bits[1] + 4 * bits[2]
