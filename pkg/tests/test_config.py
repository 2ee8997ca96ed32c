import numpy as np
import pytest

from po4dop.config import SCHEMA, ConfigError, default_config, parse_config, parse_config_text


def test_defaults_filled():
    cfg = default_config()
    assert set(cfg.values) == set(SCHEMA)
    assert cfg["params.nu"] == 0.5 and cfg["time.steps"] == 100
    s = cfg.scenario
    assert (s.grid.nx, s.grid.ny) == (8, 8)
    assert s.grid.h_max == 150.0
    assert cfg.picard.epsilon is None and cfg.picard.weight_C is None


def test_minimal_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# small run\ngrid.nx = 2\ngrid.ny = 2   # inline comment\ntime.steps = 5\n")
    cfg = parse_config(p)
    assert cfg.scenario.grid.nx == 2 and cfg.scenario.steps == 5
    assert cfg.output_dir == tmp_path / "out"


@pytest.mark.parametrize("text,match", [
    ("params.nu = 1.5", "0 < nu < 1"),
    ("params.nu = 0.4\nparams.nu = 0.3", "duplicate key 'params.nu'"),
    ("grid.nz = 3", "unknown key 'grid.nz'"),
    ("grid.nx = 2.5", "grid.nx: expected an integer"),
    ("params.alpha = abc", "params.alpha: expected a finite number"),
    ("params.alpha = nan", "params.alpha"),
    ("params.K_P = 0", "K_P > 0"),
    ("grid.nx", "expected 'key = value'"),
    ("time.T =", "missing value"),
    ("solver.epsilon = 60", "epsilon < kappa_min/2"),
    ("solver.weight_C = 1", "weight_C >"),
    ("grid.depth_min = 55", "multiple"),
    ("light.shape = square", "shape in"),
])
def test_rejections_name_key_and_constraint(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "nope.cfg")


def test_missing_referenced_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("grid.bathymetry = missing.csv\n")
    with pytest.raises(ConfigError):
        parse_config(p)


def test_user_weight_and_epsilon_accepted():
    cfg = parse_config_text("fields.kappa = 1\nsolver.epsilon = 0.2\nsolver.weight_C = 1e6\ntime.steps = 4")
    assert cfg.picard.epsilon == 0.2 and cfg.picard.weight_C == 1e6


def test_stream_function_file(tmp_path):
    psi = np.zeros((3, 4))
    psi[1, 1:3] = [5.0, 2.0]
    (tmp_path / "psi.txt").write_text("\n".join(" ".join(str(v) for v in row) for row in psi.T) + "\n")
    cfg = parse_config_text("grid.nx = 2\ngrid.ny = 1\ngrid.depth_min = 30\ngrid.depth_max = 30\n"
                            "fields.stream_function = psi.txt", base=tmp_path)
    assert np.max(np.abs(cfg.scenario.env.velocity)) > 0
