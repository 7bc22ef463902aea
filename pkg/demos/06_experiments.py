"""Reproducible experiment runs and the command-line interface.

Run with ``python demos/06_experiments.py``.
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from wasep import ScalingParams
from wasep.experiments import ExperimentSpec, read_summary, run

# %% An ExperimentSpec run writes a CSV of series and a JSON summary
out = Path(tempfile.mkdtemp())
spec = ExperimentSpec(ScalingParams(n=16, L_macro=4, rho=0.3, alpha=1.0, T=0.5),
                      "stationarity", replicas=50, seed=11, out=str(out),
                      options={"grid_points": 6, "window": 8})
stats, result = run(spec)
print("mean window density %.4f +- %.4f, passed: %s" % (stats.mean, stats.stderr, result["passed"]))
print("files:", sorted(p.name for p in out.iterdir()))
print("build id:", read_summary(out / "stationarity.json")["build_id"])

# %% The same through the CLI with a key = value config file
cfg = out / "run.cfg"
cfg.write_text("n = 16\nL_macro = 4\nrho = 0.5\nT = 0.5\nseed = 2\nreplicas = 20\n")
for args in (["simulate", "--config", str(cfg)], ["rate", "--times", "1,2", "--alpha", "1,1"]):
    res = subprocess.run([sys.executable, "-m", "wasep", *args], capture_output=True, text=True)
    out_json = json.loads(res.stdout)
    print("$ wasep", " ".join(args), "-> exit", res.returncode)
    print("  ", {k: out_json[k] for k in ("kind", "passed", "rate", "seed") if k in out_json})
