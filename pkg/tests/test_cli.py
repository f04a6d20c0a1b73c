import json
import subprocess
import sys

import numpy as np
import pytest

from rdcontrol.cli import main
from rdcontrol.fieldio import read_rdf

SMALL = """
deterministic = true
[grid]
nx = 12
ny = 12
[time]
T = 5.0
dt = 0.5
checkpoint_stride = 4
[model]
preset = "nodal-lefty"
alpha_n = 0.8
alpha_l = 4.0
[initial]
seed = 3
[target]
alpha_n = 0.5
alpha_l = 4.0
[optimizer]
max_iters = 3
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(SMALL)
    return p


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_simulate_writes_archive_and_is_deterministic(cfg, tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "-c", str(cfg), "--out", str(tmp_path / name)]) == 0
    ma, mb = manifest(tmp_path / "a"), manifest(tmp_path / "b")
    assert ma["status"] == "ok" and ma["command"] == "simulate"
    assert ma["artifacts"] == mb["artifacts"]
    assert ma["result"]["trajectory_hash"] == mb["result"]["trajectory_hash"]
    assert "trajectory/state_00000008.rdf" in ma["artifacts"]
    arch = json.loads((tmp_path / "a" / "trajectory" / "manifest.json").read_text())
    assert arch["seed"] == 3 and arch["clamp"]["count"] == 0
    assert set(ma["timings"]) == {"initial", "simulate", "write"}


def test_simulate_from_stored_initial_state(cfg, tmp_path):
    assert main(["simulate", "-c", str(cfg), "--out", str(tmp_path / "a")]) == 0
    ic = tmp_path / "a" / "trajectory" / "state_00000000.rdf"
    assert main(["simulate", "-c", str(cfg), "--set", f'initial.file="{ic}"', "--out", str(tmp_path / "b")]) == 0
    assert manifest(tmp_path / "a")["result"]["trajectory_hash"] == manifest(tmp_path / "b")["result"]["trajectory_hash"]


def test_make_target_optimize_render_metrics(cfg, tmp_path):
    out = tmp_path / "t"
    assert main(["make-target", "-c", str(cfg), "--out", str(out)]) == 0
    m = manifest(out)
    assert m["result"]["steadiness_residual"] > 0 and m["result"]["alpha_n"] == 0.5
    target = out / "target.rdf"
    assert read_rdf(target).names == ("nodal", "lefty")

    opt = tmp_path / "o"
    assert main(["optimize", "-c", str(cfg), "--set", f'cost.target="{target}"', "--out", str(opt)]) == 0
    res = json.loads((opt / "result.json").read_text())
    assert res["iterations"] <= 3 and res["J_history"][-1] <= res["J_history"][0]
    tel = [json.loads(x) for x in (opt / "telemetry.jsonl").read_text().splitlines()]
    assert {"iter", "J", "tracking", "control", "stationarity", "step", "backtracks", "beta"} <= set(tel[0])
    u = np.load(opt / "control.npy")
    assert u.shape == (10, 2, 12, 12) and u.min() >= 0 and u.max() <= 1

    ren = tmp_path / "r"
    assert main(["render", "-c", str(cfg), "--set", f'render.field="{opt / "final.rdf"}"',
                 "--set", f'render.compare="{target}"', "--set", "render.species=\"nodal\"",
                 "--out", str(ren)]) == 0
    assert (ren / "final_nodal.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    met = tmp_path / "m"
    assert main(["metrics", "-c", str(cfg), "--set", f'metrics.achieved="{target}"',
                 "--set", f'metrics.target="{target}"', "--out", str(met)]) == 0
    rep = json.loads((met / "metrics.json").read_text())
    assert rep["max_relative_error"] == 0.0


def test_render_archive_snapshot_stride(cfg, tmp_path):
    assert main(["simulate", "-c", str(cfg), "--out", str(tmp_path / "s")]) == 0
    out = tmp_path / "r"
    assert main(["render", "-c", str(cfg), "--set", f'render.archive="{tmp_path / "s" / "trajectory"}"',
                 "--set", "render.snapshot_stride=8", "--set", 'render.species="lefty"', "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.png")) == ["state_00000000_lefty.png", "state_00000008_lefty.png"]


def test_render_is_byte_identical(cfg, tmp_path):
    main(["make-target", "-c", str(cfg), "--out", str(tmp_path / "t")])
    f = tmp_path / "t" / "target.rdf"
    for name in ("a", "b"):
        assert main(["render", "-c", str(cfg), "--set", f'render.field="{f}"', "--out", str(tmp_path / name)]) == 0
    assert manifest(tmp_path / "a")["artifacts"] == manifest(tmp_path / "b")["artifacts"]


def test_gradcheck_pass_and_check_failure(cfg, tmp_path):
    assert main(["gradcheck", "-c", str(cfg), "--set", "gradcheck.n_dirs=2", "--out", str(tmp_path / "g")]) == 0
    rep = json.loads((tmp_path / "g" / "gradcheck.json").read_text())
    assert rep["passed"] and max(rep["min_errors"]) <= 1e-6
    code = main(["gradcheck", "-c", str(cfg), "--set", "gradcheck.n_dirs=1", "--set", "gradcheck.tol=1e-30",
                 "--out", str(tmp_path / "f")])
    assert code == 4
    assert manifest(tmp_path / "f")["status"] == "failed"


def test_config_errors_exit_2(cfg, tmp_path, capsys):
    assert main(["simulate", "-c", str(cfg), "--set", "bounds.lower=2.0", "--out", str(tmp_path / "x")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and "bounds" in err["message"]
    assert main(["simulate", "-c", str(tmp_path / "missing.toml")]) == 2
    assert main(["optimize", "-c", str(cfg), "--out", str(tmp_path / "o")]) == 2
    m = manifest(tmp_path / "o")
    assert m["status"] == "failed" and m["error"]["class"] == "config"


def test_solver_failure_exit_3(cfg, tmp_path):
    code = main(["simulate", "-c", str(cfg), "--set", 'model.units="h"', "--set", "model.alpha_n=1.7e308",
                 "--out", str(tmp_path / "s")])
    assert code == 3
    assert manifest(tmp_path / "s")["error"]["class"] == "solver"


def test_console_script_entry_point(cfg, tmp_path):
    r = subprocess.run([sys.executable, "-m", "rdcontrol.cli", "simulate", "-c", str(cfg), "--out",
                        str(tmp_path / "e"), "--fast"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert manifest(tmp_path / "e")["deterministic"] is False
