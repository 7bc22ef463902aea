"""Experiment orchestration: configuration, replica ensembles, statistics,
comparison against predictions and serialization."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rate
from .model import ScalingParams, replica_seed, validate_assumption
from .observables import fluctuation_field, occupation_time
from .simulator import (
    bond_current,
    girsanov_weight,
    log_martingale,
    simulate,
    simulate_tilted,
    states_at,
)
from .testfn import TestFunction

__all__ = [
    "KINDS",
    "ExperimentSpec",
    "SummaryStats",
    "Comparison",
    "parse_config",
    "load_config",
    "run",
    "run_ensemble",
    "summarize",
    "compare",
    "build_id",
    "write_csv",
    "read_summary",
]

KINDS = (
    "stationarity",
    "occupation-variance",
    "tilted-hydro",
    "martingale-check",
    "mdp-estimate",
    "verify-rates",
)

PARAM_KEYS = ("n", "d", "alpha", "beta", "rho", "theta", "T", "L_macro")
RUN_KEYS = ("seed", "replicas")
# per-kind options with defaults
OPTION_DEFAULTS = {
    "grid_points": 11,
    "amplitude": 1.0,  # test-function amplitude
    "radius": 1.5,  # test-function radius
    "phi_amplitude": 0.0,  # initial perturbation for martingale-check
    "target_time": 1.0,  # optimal-profile constraint time
    "target_alpha": 0.5,  # optimal-profile constraint value
    "level": 0.5,  # mdp-estimate threshold on Gamma_T
    "tilt": 0,  # mdp-estimate: use the optimal profile as tilt
    "cutoff": 5.0,  # truncation radius of heat-type tilts
    "window": 0,  # stationarity: half-width of the density window in sites (0 = n)
}
INT_KEYS = {"n", "d", "L_macro", "seed", "replicas", "grid_points", "tilt", "window", "workers"}


def _coerce(key, text):
    if key == "kind":
        return text
    if key in INT_KEYS:
        val = float(text)
        if val != int(val):
            raise ValueError(f"{key} must be an integer, got {text}")
        return int(val)
    return float(text)


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    allowed = set(PARAM_KEYS) | set(RUN_KEYS) | set(OPTION_DEFAULTS) | {"kind", "workers"}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


@dataclass
class ExperimentSpec:
    params: ScalingParams
    kind: str
    replicas: int = 100
    seed: int = 0
    out: str | None = None
    workers: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.kind == "mdp-estimate" and self.replicas < 100:
            raise ValueError("mdp-estimate needs at least 100 replicas")
        if self.kind == "tilted-hydro" and self.params.d != 1:
            raise ValueError("tilted-hydro is one-dimensional")
        unknown = set(self.options) - set(OPTION_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown options {sorted(unknown)}")
        self.options = {**OPTION_DEFAULTS, **self.options}

    @classmethod
    def from_config(cls, cfg: dict, **overrides):
        cfg = {**cfg, **{k: v for k, v in overrides.items() if v is not None}}
        params = ScalingParams(**{k: cfg[k] for k in PARAM_KEYS if k in cfg})
        opts = {k: cfg[k] for k in OPTION_DEFAULTS if k in cfg}
        return cls(params, cfg.get("kind", "stationarity"), int(cfg.get("replicas", 100)),
                   int(cfg.get("seed", 0)), cfg.get("out"), int(cfg.get("workers", 1)), opts)

    def echo(self) -> dict:
        return {"params": asdict(self.params), "kind": self.kind, "replicas": self.replicas,
                "seed": self.seed, "workers": self.workers, "options": dict(self.options)}


@dataclass
class SummaryStats:
    """Ensemble statistics of scalar and per-grid-time observables."""

    mean: float
    variance: float
    stderr: float
    count: int
    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    series: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "stderr": self.stderr,
            "count": self.count,
            "grid": self.grid.tolist(),
            "series": {k: {kk: np.asarray(vv).tolist() for kk, vv in v.items()}
                       for k, v in self.series.items()},
            "extra": _jsonable(self.extra),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SummaryStats":
        return cls(d["mean"], d["variance"], d["stderr"], d["count"], np.asarray(d["grid"]),
                   {k: {kk: np.asarray(vv) for kk, vv in v.items()} for k, v in d["series"].items()},
                   d.get("extra", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _moments(x: np.ndarray) -> dict:
    """Mean, variance and their standard errors along axis 0."""
    m = x.shape[0]
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1) if m > 1 else np.zeros_like(mean)
    se = np.sqrt(var / m)
    c = x - mean
    m4 = (c ** 4).mean(axis=0)
    var_se = np.sqrt(np.maximum(m4 - var ** 2, 0.0) / m) if m > 1 else np.zeros_like(mean)
    return {"mean": mean, "variance": var, "stderr": se, "variance_stderr": var_se}


def summarize(values, grid=None, series=None, extra=None) -> SummaryStats:
    """Statistics of per-replica scalars plus optional (replicas, len(grid)) series."""
    v = np.asarray(values, dtype=float)
    mom = _moments(v[:, None])
    out = SummaryStats(float(mom["mean"][0]), float(mom["variance"][0]), float(mom["stderr"][0]),
                       int(v.size), np.zeros(0) if grid is None else np.asarray(grid, float),
                       {}, dict(extra or {}))
    for name, arr in (series or {}).items():
        out.series[name] = _moments(np.asarray(arr, dtype=float))
    return out


def run_ensemble(task, replicas: int, seed: int, workers: int = 1) -> list:
    """Evaluate ``task(k, replica_seed(seed, k))`` for every replica, in order.

    Seeds depend only on (seed, k), and results are collected in replica
    order, so the output is independent of ``workers``.
    """
    seeds = [replica_seed(seed, k) for k in range(replicas)]
    if workers <= 1:
        return [task(k, s) for k, s in enumerate(seeds)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, range(replicas), seeds))


@dataclass
class Comparison:
    passed: bool
    z: np.ndarray
    rel_err: np.ndarray
    mode: str
    tolerance: float | None

    def to_json(self) -> dict:
        return {"passed": bool(self.passed), "z": self.z.tolist(), "rel_err": self.rel_err.tolist(),
                "mode": self.mode, "tolerance": self.tolerance}


def compare(estimate, stderr, prediction, tolerance: float | None = None) -> Comparison:
    """Per-point z-scores and relative errors of an estimate against a prediction.

    With ``tolerance`` the verdict is all relative errors <= tolerance;
    otherwise all |z| <= 3.
    """
    est = np.atleast_1d(np.asarray(estimate, dtype=float))
    se = np.atleast_1d(np.asarray(stderr, dtype=float))
    pred = np.atleast_1d(np.asarray(prediction, dtype=float))
    if not (est.shape == se.shape == pred.shape):
        raise ValueError("grid mismatch between estimate, stderr and prediction")
    diff = est - pred
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(diff == 0, 0.0, diff / se)
        rel = np.where(diff == 0, 0.0, np.abs(diff) / np.abs(pred))
    if tolerance is None:
        ok = bool(np.all(np.abs(z) <= 3.0))
        mode = "z"
    else:
        ok = bool(np.all(rel <= tolerance))
        mode = "relative"
    return Comparison(ok, z, rel, mode, tolerance)


def build_id() -> str:
    """Content hash of the package sources, in the style of a short commit id."""
    h = hashlib.sha1()
    root = Path(__file__).parent
    for p in sorted(root.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return "src-" + h.hexdigest()[:12]


def write_csv(path, grid, columns: dict, replica_ids) -> None:
    """One row per (replica, grid time): time, observables..., replica_id."""
    names = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *names, "replica_id"])
        for r, rid in enumerate(replica_ids):
            for i, t in enumerate(grid):
                w.writerow([repr(float(t)), *(repr(float(columns[k][r][i])) for k in names), int(rid)])


def read_summary(path) -> dict:
    data = json.loads(Path(path).read_text())
    data["summary"] = SummaryStats.from_json(data["summary"])
    return data


# ---------------------------------------------------------------------------
# experiment kinds


def _grid(spec):
    return np.linspace(0.0, spec.params.T, int(spec.options["grid_points"]))


def _bump(spec):
    o = spec.options
    return TestFunction.bump(spec.params.d, amplitude=o["amplitude"], radius=o["radius"])


def _stationarity(spec):
    p = spec.params
    g = _grid(spec)
    half = int(spec.options["window"]) or p.n
    pos = np.abs(np.indices((p.side,) * p.d).reshape(p.d, -1).T)
    pos = np.minimum(pos, p.side - pos)
    window = np.all(pos <= half, axis=1)

    def task(k, s):
        path = simulate(p, seed=s, grid=g)
        snaps = states_at(path, g)
        return snaps[:, window].mean(axis=1), bond_current(path)

    res = run_ensemble(task, spec.replicas, spec.seed, spec.workers)
    dens = np.array([r[0] for r in res])
    cur = np.array([r[1] for r in res], dtype=float)
    time_avg = dens.mean(axis=1)
    stats = summarize(time_avg, g, {"density": dens}, {"bond_current": _moments(cur[:, None])})
    comp = compare(stats.mean, stats.stderr, p.rho)
    checks = {"density": comp.to_json()}
    if p.alpha == 0:
        cm = stats.extra["bond_current"]
        checks["bond_current"] = compare(cm["mean"], cm["stderr"], 0.0).to_json()
    passed = all(c["passed"] for c in checks.values())
    return stats, {"density": dens}, g, checks, passed


def _occupation_variance(spec):
    p = spec.params
    g = _grid(spec)

    def task(k, s):
        return occupation_time(simulate(p, seed=s, grid=g), grid=g).values

    gam = np.array(run_ensemble(task, spec.replicas, spec.seed, spec.workers))
    stats = summarize(gam[:, -1], g, {"gamma": gam})
    # Var(Gamma_t) = (n / a_n^2) sigma^2 t^{3/2} at leading order
    scale = p.a_n ** 2 / p.n
    mom = stats.series["gamma"]
    pos = g > 0
    est = scale * mom["variance"][pos] / g[pos] ** 1.5
    se = scale * mom["variance_stderr"][pos] / g[pos] ** 1.5
    target = np.full(est.shape, rate.sigma_sq(p.rho))
    comp = compare(est, se, target, tolerance=0.15)
    stats.extra["scaled_variance"] = {"time": g[pos], "value": est, "stderr": se,
                                      "sigma_sq": rate.sigma_sq(p.rho)}
    return stats, {"gamma": gam}, g, {"variance": comp.to_json()}, comp.passed


def _tilted_hydro(spec):
    p = spec.params
    o = spec.options
    g = _grid(spec)
    prof = rate.optimal_profile(o["target_time"], o["target_alpha"], p.rho)
    H = prof.to_test_function(o["cutoff"])
    G = _bump(spec)
    phi = H.spatial(0.0)

    def task(k, s):
        path, _ = simulate_tilted(p, H, phi, seed=s, grid=g, weight=False)
        snaps = states_at(path, g)
        return np.array([fluctuation_field(snaps[i], G, g[i], p) for i in range(g.size)])

    vals = np.array(run_ensemble(task, spec.replicas, spec.seed, spec.workers))
    stats = summarize(vals[:, -1], g, {"field": vals})
    pred = np.array([rate.field_prediction(prof, p.rho, t, G) for t in g])
    mom = stats.series["field"]
    comp = compare(mom["mean"][1:], mom["stderr"][1:], pred[1:])
    stats.extra["prediction"] = pred
    return stats, {"field": vals}, g, {"field": comp.to_json()}, comp.passed


def _martingale_check(spec):
    p = spec.params
    H = _bump(spec)
    amp = spec.options["phi_amplitude"]
    phi = None
    if amp:
        phi = TestFunction.bump(p.d, amplitude=amp, radius=spec.options["radius"]).spatial(0.0)

    def task(k, s):
        path = simulate(p, seed=s)
        return math.exp(log_martingale(path, H)), math.exp(girsanov_weight(path, H, phi))

    res = np.array(run_ensemble(task, spec.replicas, spec.seed, spec.workers))
    stats = summarize(res[:, 0], extra={"girsanov": _moments(res[:, 1:2])})
    gm = stats.extra["girsanov"]
    checks = {
        "martingale": compare(stats.mean, stats.stderr, 1.0).to_json(),
        "girsanov": compare(gm["mean"], gm["stderr"], 1.0).to_json(),
    }
    passed = all(c["passed"] for c in checks.values())
    return stats, {}, np.zeros(0), checks, passed


def _mdp_estimate(spec):
    p = spec.params
    o = spec.options
    g = np.array([0.0, p.T])
    level = o["level"]
    tilt = None
    if o["tilt"]:
        prof = rate.optimal_profile(p.T, level, p.rho)
        H = prof.to_test_function(o["cutoff"])
        tilt = (H, H.spatial(0.0))

    def task(k, s):
        if tilt is None:
            path = simulate(p, seed=s, grid=g)
            w = 0.0
        else:
            path, _ = simulate_tilted(p, tilt[0], tilt[1], seed=s, grid=g, weight=False)
            w = -girsanov_weight(path, tilt[0], tilt[1])
        hit = occupation_time(path, grid=g).values[-1] >= level
        return (math.exp(w) if hit else 0.0), float(hit)

    res = np.array(run_ensemble(task, spec.replicas, spec.seed, spec.workers))
    w, hits = res[:, 0], res[:, 1]
    stats = summarize(w)
    scale = p.n ** p.d / p.a_n ** 2
    prob = stats.mean
    if prob > 0:
        est = scale * math.log(prob)
        err = scale * stats.stderr / prob
    else:
        est, err = -math.inf, math.inf
    theory = -level ** 2 / (2 * rate.sigma_sq(p.rho) * p.T ** 1.5)
    stats.extra.update(scaled_log_prob=est, stderr=err, hits=int(hits.sum()),
                       limit_rate=theory, lattice_side=p.side)
    return stats, {}, np.zeros(0), {}, bool(hits.sum() > 0)


def _verify_rates(spec):
    rho = spec.params.rho
    T = spec.params.T
    checks = {}
    ints = rate.verify_integrals(T)
    for k, (num, exact) in ints.items():
        rel = abs(num - exact) / abs(exact)
        checks[k] = {"quadrature": num, "closed_form": exact, "rel_err": rel, "passed": rel <= 1e-6}
    for t in (0.5, 1.0, 2.0):
        v = rate.kernel_sq_integral(t)
        checks[f"kernel_l2_t{t}"] = {"value": v, "expected": t ** 1.5,
                                     "passed": abs(v - t ** 1.5) <= 1e-4}
    for alpha, times in (([1.0], [1.0]), ([1.0, 1.0], [1.0, 2.0])):
        grid = np.linspace(0.0, max(times), 257)
        a = rate.minimize_path_rate(alpha, times, grid, rho)
        b = rate.finite_dim_rate(alpha, times, rho)
        checks[f"path_vs_finite_k{len(times)}"] = {"path": a, "finite": b,
                                                  "passed": abs(a - b) <= 0.02 * abs(b)}
    vals = np.array([c["passed"] for c in checks.values()], dtype=float)
    stats = summarize(vals)
    return stats, {}, np.zeros(0), checks, bool(vals.all())


_RUNNERS = {
    "stationarity": _stationarity,
    "occupation-variance": _occupation_variance,
    "tilted-hydro": _tilted_hydro,
    "martingale-check": _martingale_check,
    "mdp-estimate": _mdp_estimate,
    "verify-rates": _verify_rates,
}


def run(spec: ExperimentSpec):
    """Run an experiment; returns (SummaryStats, result dict).

    When ``spec.out`` is set, writes ``<kind>.csv`` (series, when the kind
    has any) and ``<kind>.json`` (summary, checks, configuration echo,
    build id, seed, assumption report) into that directory.
    """
    stats, columns, grid, checks, passed = _RUNNERS[spec.kind](spec)
    report = validate_assumption(spec.params)
    result = {
        "kind": spec.kind,
        "passed": bool(passed),
        "checks": checks,
        "summary": stats.to_json(),
        "config": spec.echo(),
        "build_id": build_id(),
        "seed": spec.seed,
        "assumption": report.as_dict(),
        "lattice_side": spec.params.side,
    }
    if spec.out:
        os.makedirs(spec.out, exist_ok=True)
        if columns:
            write_csv(Path(spec.out) / f"{spec.kind}.csv", grid, columns, range(spec.replicas))
        Path(spec.out, f"{spec.kind}.json").write_text(json.dumps(_jsonable(result), indent=2,
                                                                  sort_keys=True))
    return stats, result
