import csv
import json

import numpy as np
import pytest

from wasep.experiments import (
    ExperimentSpec,
    SummaryStats,
    build_id,
    compare,
    parse_config,
    read_summary,
    run,
    run_ensemble,
    summarize,
)
from wasep.model import ScalingParams, replica_seed

CONFIG = """
# small stationarity run
kind = stationarity
n = 8
L_macro = 2
rho = 0.5
alpha = 1.0
T = 0.5
seed = 3
replicas = 4
grid_points = 5
"""


# configuration ---------------------------------------------------------------

def test_parse_config_types():
    cfg = parse_config(CONFIG)
    assert cfg["kind"] == "stationarity"
    assert cfg["n"] == 8 and isinstance(cfg["n"], int)
    assert cfg["rho"] == 0.5 and isinstance(cfg["rho"], float)
    assert cfg["grid_points"] == 5


@pytest.mark.parametrize("text", ["n 8", "colour = red", "n = 8.5", "rho = high"])
def test_parse_config_errors(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_spec_from_config_and_echo():
    spec = ExperimentSpec.from_config(parse_config(CONFIG), replicas=2)
    assert spec.replicas == 2
    assert spec.params.n == 8 and spec.params.alpha == 1.0
    echo = spec.echo()
    assert echo["kind"] == "stationarity"
    assert echo["options"]["grid_points"] == 5
    json.dumps(echo)


@pytest.mark.parametrize("kw", [dict(kind="nope"), dict(replicas=0),
                                dict(kind="mdp-estimate", replicas=10),
                                dict(options={"bogus": 1})])
def test_spec_validation(kw):
    args = dict(params=ScalingParams(n=8), kind="stationarity", replicas=5)
    args.update(kw)
    with pytest.raises(ValueError):
        ExperimentSpec(**args)


# statistics --------------------------------------------------------------------

def test_summarize_stderr():
    x = np.arange(10.0)
    s = summarize(x)
    assert s.count == 10
    assert s.mean == pytest.approx(4.5)
    assert s.variance == pytest.approx(np.var(x, ddof=1))
    assert s.stderr == pytest.approx(np.std(x, ddof=1) / np.sqrt(10))


def test_summary_json_round_trip_is_exact():
    rng = np.random.default_rng(0)
    grid = np.linspace(0, 1, 7)
    s = summarize(rng.standard_normal(50), grid, {"a": rng.standard_normal((50, 7))},
                  {"note": 1.0 / 3.0})
    back = SummaryStats.from_json(json.loads(json.dumps(s.to_json())))
    assert back.mean == s.mean and back.variance == s.variance and back.stderr == s.stderr
    assert np.array_equal(back.grid, s.grid)
    for k in s.series["a"]:
        assert np.array_equal(back.series["a"][k], s.series["a"][k])
    assert back.extra["note"] == s.extra["note"]


def test_compare_identical_inputs_pass():
    c = compare([1.0, 2.0], [0.1, 0.1], [1.0, 2.0])
    assert c.passed and np.all(c.z == 0)


def test_compare_shift_by_ten_stderr_fails():
    c = compare([1.0, 2.0], [0.1, 0.1], [1.0, 3.0])
    assert not c.passed
    assert c.z[1] == pytest.approx(-10.0)


def test_compare_relative_mode():
    c = compare([1.1], [1e-9], [1.0], tolerance=0.15)
    assert c.passed and c.mode == "relative"
    assert c.rel_err[0] == pytest.approx(0.1)
    assert not compare([1.2], [1e-9], [1.0], tolerance=0.15).passed


def test_compare_grid_mismatch():
    with pytest.raises(ValueError):
        compare([1.0, 2.0], [0.1], [1.0, 2.0])


def test_run_ensemble_independent_of_workers():
    task = lambda k, s: (k, s, np.random.default_rng(s).random())
    one = run_ensemble(task, 12, 5, workers=1)
    many = run_ensemble(task, 12, 5, workers=4)
    assert one == many
    assert [r[1] for r in one] == [replica_seed(5, k) for k in range(12)]


def test_build_id_is_stable():
    assert build_id() == build_id()
    assert build_id().startswith("src-")


# end-to-end runs -----------------------------------------------------------------

def _spec(tmp_path, **kw):
    cfg = parse_config(CONFIG)
    return ExperimentSpec.from_config(cfg, out=str(tmp_path), **kw)


def test_run_writes_csv_and_json(tmp_path):
    stats, result = run(_spec(tmp_path))
    assert result["kind"] == "stationarity"
    assert result["seed"] == 3
    assert result["lattice_side"] == 16
    assert "ok" in result["assumption"]
    rows = list(csv.reader(open(tmp_path / "stationarity.csv")))
    assert rows[0][0] == "time" and rows[0][-1] == "replica_id"
    assert len(rows) == 1 + 4 * 5
    assert sorted({int(r[-1]) for r in rows[1:]}) == [0, 1, 2, 3]
    back = read_summary(tmp_path / "stationarity.json")
    assert back["summary"].mean == stats.mean
    assert back["build_id"] == build_id()


def test_single_replica_runs_are_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(_spec(a, replicas=1))
    run(_spec(b, replicas=1))
    for name in ("stationarity.csv", "stationarity.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_independent_of_workers(tmp_path):
    s1, r1 = run(_spec(tmp_path / "w1", workers=1))
    s3, r3 = run(_spec(tmp_path / "w3", workers=3))
    assert s1.to_json() == s3.to_json()
    assert (tmp_path / "w1" / "stationarity.csv").read_bytes() == \
        (tmp_path / "w3" / "stationarity.csv").read_bytes()


def test_stationarity_hundred_replicas():
    spec = ExperimentSpec(ScalingParams(n=8, L_macro=2, rho=0.3, alpha=1.0, T=0.5),
                          "stationarity", replicas=100, seed=11, options={"grid_points": 6})
    stats, result = run(spec)
    assert abs(stats.mean - 0.3) <= 3 * stats.stderr
    assert result["passed"]


def test_verify_rates_kind_is_deterministic():
    spec = ExperimentSpec(ScalingParams(n=8), "verify-rates", replicas=1)
    s1, r1 = run(spec)
    s2, r2 = run(spec)
    assert r1["passed"]
    assert r1["checks"] == r2["checks"]
    assert set(r1["checks"]) >= {"cal1", "cal2", "cal3", "path_vs_finite_k1", "path_vs_finite_k2"}


def test_occupation_variance_reports_relative_errors():
    spec = ExperimentSpec(ScalingParams(n=8, L_macro=4, theta=0.5, T=0.5),
                          "occupation-variance", replicas=50, seed=2, options={"grid_points": 3})
    stats, result = run(spec)
    chk = result["checks"]["variance"]
    assert chk["mode"] == "relative" and chk["tolerance"] == 0.15
    assert len(chk["rel_err"]) == 2


def test_martingale_check_small():
    spec = ExperimentSpec(ScalingParams(n=8, L_macro=4, theta=0.55, T=0.5), "martingale-check",
                          replicas=200, seed=4, options={"phi_amplitude": 1.0})
    stats, result = run(spec)
    assert set(result["checks"]) == {"martingale", "girsanov"}
    assert abs(stats.mean - 1.0) <= 4 * stats.stderr


def test_mdp_estimate_reports_lattice_side():
    spec = ExperimentSpec(ScalingParams(n=8, L_macro=4, theta=0.75, T=0.5), "mdp-estimate",
                          replicas=100, seed=1, options={"level": 0.1})
    stats, result = run(spec)
    extra = result["summary"]["extra"]
    assert extra["lattice_side"] == 32
    assert extra["limit_rate"] < 0
