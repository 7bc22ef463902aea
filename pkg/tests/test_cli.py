import json
import subprocess
import sys

import numpy as np
import pytest

from wasep.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, main
from wasep.simulator import read_jump_log, simulate
from wasep.model import ScalingParams, replica_seed

SMALL = """
n = 8
L_macro = 2
T = 0.5
rho = 0.5
seed = 1
replicas = 3
grid_points = 4
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL)
    return str(path)


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_simulate_writes_outputs(config, tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", config, "--out", str(out)]) == EXIT_OK
    res = _json_out(capsys)
    assert res["kind"] == "stationarity" and res["lattice_side"] == 16
    assert (out / "stationarity.csv").exists() and (out / "stationarity.json").exists()


def test_simulate_jump_log_matches_replica_zero(config, tmp_path, capsys):
    out = tmp_path / "log"
    assert main(["simulate", "--config", config, "--out", str(out), "--jump-log"]) == EXIT_OK
    capsys.readouterr()
    p = ScalingParams(n=8, L_macro=2, T=0.5, rho=0.5)
    path = simulate(p, seed=replica_seed(1, 0))
    with open(out / "jumps.bin", "rb") as fh:
        t, site, direction = read_jump_log(fh)
    assert np.array_equal(t, path.times)
    assert np.array_equal(site, path.sites)
    assert (out / "jumps.bin").stat().st_size == 17 * path.times.size


def test_jump_log_needs_out(config, capsys):
    assert main(["simulate", "--config", config, "--jump-log"]) == EXIT_ERROR
    assert "--out" in capsys.readouterr().err


def test_missing_n_is_an_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("rho = 0.5\n")
    assert main(["occupation", "--config", str(cfg)]) == EXIT_ERROR
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_is_an_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n = 8\ncolour = red\n")
    assert main(["simulate", "--config", str(cfg)]) == EXIT_ERROR


def test_missing_config_file_is_an_error(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "none.cfg")]) == EXIT_ERROR


def test_comparison_failure_exit_code(config, capsys):
    # the level is far beyond reach, so no replica hits it
    code = main(["mdp-estimate", "--config", config, "--replicas", "100", "--level", "50"])
    assert code == EXIT_FAIL
    assert _json_out(capsys)["passed"] is False


def test_rate_subcommand(tmp_path, capsys):
    out = tmp_path / "rate"
    assert main(["rate", "--times", "1", "--alpha", "1", "--out", str(out)]) == EXIT_OK
    res = _json_out(capsys)
    assert res["rate"] == pytest.approx(1.879971, abs=1e-6)
    assert res["constraint_integrals"]["t=1.0"] == pytest.approx(1.0, abs=1e-4)
    assert (out / "rate.json").exists()


def test_rate_rejects_repeated_times(capsys):
    assert main(["rate", "--times", "1,1", "--alpha", "1,1"]) == EXIT_ERROR


def test_fbm_subcommand(tmp_path, capsys):
    out = tmp_path / "fbm"
    code = main(["fbm", "--grid", "0.5,1", "--replicas", "4000", "--seed", "3", "--out", str(out)])
    assert code == EXIT_OK
    res = _json_out(capsys)
    assert res["replicas"] == 4000 and res["max_abs_z"] <= 4.0
    header = (out / "fbm.csv").read_text().splitlines()[0]
    assert header == "time,value,replica_id"


def test_verify_rates_subcommand(capsys):
    assert main(["verify-rates"]) == EXIT_OK
    res = _json_out(capsys)
    assert res["passed"] and res["checks"]["cal1"]["passed"]


def test_experiment_kind_from_config(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(SMALL + "kind = stationarity\n")
    assert main(["experiment", "--config", str(cfg)]) == EXIT_OK


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "wasep", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "rate", "fbm", "verify-rates", "mdp-estimate", "occupation"):
        assert cmd in res.stdout
