import warnings

import numpy as np
import pytest

from rdcontrol import Grid2D, SpeciesState
from rdcontrol.config import ConfigError, apply_overrides, build_config, load_config, parse_override
from rdcontrol.fieldio import write_rdf


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_preset_config_defaults(tmp_path):
    cfg = load_config(write(tmp_path, '[model]\npreset = "nodal-lefty"\nalpha_n = 0.8\nalpha_l = 4.0\n'))
    assert (cfg.grid.nx, cfg.grid.ny, cfg.grid.dx, cfg.grid.dy) == (80, 80, 10.0, 10.0)
    assert cfg.time_grid.dt == 0.5 and cfg.mu == 1.0 and cfg.lam == 1e-12
    assert cfg.lower.tolist() == [0.0, 0.0] and cfg.upper.tolist() == [1.0, 1.0]
    assert cfg.model.alpha.tolist() == [48.0, 240.0]
    # linear gains 0.8 and 4.0 nM/min per unit control
    assert [c[1] / 60 for c in cfg.model.gains.coeffs] == [0.8, 4.0]
    assert cfg.optim.max_iters == 60 and cfg.optim.tol_stat == 1e-6
    assert cfg.deterministic is True


def test_empty_config_is_valid():
    cfg = load_config(None)
    assert cfg.model.names == ("nodal", "lefty")


def test_bounds_reversed(tmp_path):
    with pytest.raises(ConfigError, match="bounds reversed") as exc:
        load_config(write(tmp_path, "[bounds]\nlower = 1.0\nupper = 0.0\n"))
    assert exc.value.key == "bounds"


def test_T_rounded_down_with_warning():
    with pytest.warns(UserWarning, match="multiple"):
        cfg = load_config(None, ["time.T=10.3", "time.dt=0.5"])
    assert cfg.time_grid.T == 10.0 and cfg.time_grid.N == 20


def test_unknown_key_warns():
    with pytest.warns(UserWarning, match="grid.nz"):
        load_config(None, ["grid.nz=3"])


def test_parse_error_reports_position(tmp_path):
    with pytest.raises(ConfigError, match=r"line 2"):
        load_config(write(tmp_path, "[grid]\nnx = = 3\n"))


@pytest.mark.parametrize("item,key", [
    ("grid.dx=-1.0", "grid.dx"),
    ("grid.nx=2.5", "grid.nx"),
    ('time.T="long"', "time.T"),
    ("cost.mu=0.0", "cost.mu"),
    ("cost.lam=-1.0", "cost.lam"),
    ("model.alpha_n=-0.1", "model.alpha_n"),
    ("bounds.lower=-0.5", "bounds.lower"),
    ("optimizer.c1=2.0", "optimizer"),
    ('model.preset="gray-scott"', "model.preset"),
])
def test_validation_reports_key_path(item, key):
    with pytest.raises(ConfigError) as exc:
        load_config(None, [item])
    assert exc.value.key == key
    assert str(exc.value).startswith(key)


def test_override_precedence(tmp_path):
    p = write(tmp_path, "[cost]\nlam = 1e-6\nmu = 2.0\n")
    cfg = load_config(p, ["cost.lam=0.5"])
    assert cfg.lam == 0.5 and cfg.mu == 2.0
    assert parse_override("render.species=nodal") == (["render", "species"], "nodal")
    assert parse_override("bounds.upper=[1, 2]") == (["bounds", "upper"], [1, 2])
    with pytest.raises(ConfigError):
        parse_override("novalue")
    with pytest.raises(ConfigError):
        apply_overrides({"cost": 3}, ["cost.lam=1"])


def test_preset_units_hours():
    cfg = load_config(None, ['model.units="h"', "model.alpha_n=48.0", "model.alpha_l=240.0"])
    assert cfg.model.alpha == pytest.approx([48.0, 240.0], rel=1e-15)


def test_custom_model(tmp_path):
    text = """
[grid]
nx = 4
ny = 3
[model]
species = ["a", "b"]
diffusion = [1.0, 20.0]
degradation = [0.1, 0.2]
alpha = [2.0, 3.0]
gains = [[0.0, 1.0], [0.5, 0.0, 2.0]]
[model.regulatory]
K = 5.0
m = 2.0
activators = [{index = 0, weight = 1.0, hill = 2.0}]
inhibitors = [{index = 1, constant = 3.0, hill = 1.0}]
"""
    cfg = load_config(write(tmp_path, text))
    assert cfg.model.names == ("a", "b")
    assert cfg.model.diffusion.tolist() == [1.0, 20.0]
    assert cfg.model.gains.coeffs == ((0.0, 1.0), (0.5, 0.0, 2.0))
    cfg_min = load_config(write(tmp_path, text.replace("[model]", '[model]\nunits = "min"'), "m.toml"))
    assert cfg_min.model.degradation.tolist() == pytest.approx([6.0, 12.0])


def test_custom_model_alpha_file(tmp_path):
    g = Grid2D(4, 3, 10.0, 10.0)
    alpha = np.arange(24.0).reshape(2, 4, 3)
    write_rdf(tmp_path / "alpha.rdf", SpeciesState(g, alpha, ("a", "b")))
    text = """
[grid]
nx = 4
ny = 3
[model]
species = ["a", "b"]
diffusion = [1.0, 20.0]
degradation = [0.1, 0.2]
alpha_file = "alpha.rdf"
gains = [[0.0, 1.0], [0.0, 1.0]]
[model.regulatory]
K = 5.0
activators = [{index = 0}]
"""
    cfg = load_config(write(tmp_path, text))
    assert np.array_equal(cfg.model.alpha, alpha)


def test_custom_model_missing_key():
    with pytest.raises(ConfigError, match="missing key"):
        load_config(None, ['model.species=["a"]', "model.diffusion=[1.0]"])


def test_negative_gain_on_box_rejected():
    with pytest.raises(ConfigError) as exc:
        load_config(None, ["model.beta_n=-0.8"])
    assert exc.value.key == "model.beta_n"


def test_paths_resolve_relative_to_config(tmp_path):
    sub = tmp_path / "exp"
    sub.mkdir()
    cfg = load_config(write(sub, '[cost]\ntarget = "t.rdf"\n'))
    assert cfg.resolve(cfg.target_path) == sub / "t.rdf"
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_config({"output": {"dir": "x"}})
