import csv
import math
import subprocess
import sys

import pytest

from po4dop.checks import CHECK_COLUMNS
from po4dop.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from po4dop.identify import OBS_COLUMNS
from po4dop.solver import ENERGY_COLUMNS, PICARD_COLUMNS
from po4dop.transport import DIAGNOSTIC_COLUMNS

SMALL = """\
grid.nx = 3
grid.ny = 2
grid.depth_min = 50
grid.depth_max = 150
time.steps = 20
output.snapshot_every = 5
"""

FLAT = """\
grid.nx = 3
grid.ny = 2
grid.depth_min = 120
grid.depth_max = 120
fields.psi_amplitude = 500
time.steps = 20
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_forward_outputs(cfg, tmp_path):
    out = tmp_path / "fwd"
    assert main(["forward", "-c", str(cfg), "-o", str(out)]) == EXIT_OK
    snaps = sorted(p.name for p in out.glob("snapshot_*.csv"))
    assert snaps == [f"snapshot_{k:05d}.csv" for k in (0, 5, 10, 15, 20)]
    assert _rows(out / "snapshot_00000.csv")[0] == ["cell_i", "cell_j", "cell_k", "y1", "y2"]
    diag = _rows(out / "diagnostics.csv")
    assert tuple(diag[0]) == DIAGNOSTIC_COLUMNS and len(diag) == 22
    m = [float(r[1]) for r in diag[1:]]
    assert max(abs(x - m[0]) for x in m) <= 1e-10 * m[0]


def test_picard_report_and_bound(cfg, tmp_path):
    out = tmp_path / "pic"
    assert main(["picard", "-c", str(cfg), "-o", str(out)]) == EXIT_OK
    rows = _rows(out / "picard_report.csv")
    assert tuple(rows[0]) == PICARD_COLUMNS
    consts = {r[0]: float(r[1]) for r in _rows(out / "constants.csv")[1:]}
    ratios = [float(r[2]) for r in rows[1:] if not math.isnan(float(r[2]))]
    assert ratios and ratios[-1] <= min(1.0, consts["L_A"]) + 0.1
    energy = _rows(out / "energy.csv")
    assert tuple(energy[0]) == ENERGY_COLUMNS and energy[1][-1] == "true"


def test_byte_identical_reruns(cfg, tmp_path):
    for name in ("a", "b"):
        assert main(["picard", "-c", str(cfg), "-o", str(tmp_path / name)]) == EXIT_OK
        assert main(["forward", "-c", str(cfg), "-o", str(tmp_path / name)]) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_tangent_fd_check(cfg, tmp_path):
    out = tmp_path / "tan"
    assert main(["tangent", "-c", str(cfg), "-o", str(out), "--param", "lambda", "--fd-check"]) == EXIT_OK
    rows = _rows(out / "tangent_lambda_fd.csv")
    assert float(rows[1][3]) <= 1e-3 and rows[1][-1] == "true"
    assert (out / "tangent_lambda_00020.csv").exists()


def test_identify_round_trip(cfg, tmp_path):
    out = tmp_path / "idf"
    obs = tmp_path / "obs.csv"
    assert main(["identify", "-c", str(cfg), "-o", str(out), "--synthesize", str(obs), "--seed", "4"]) == EXIT_OK
    assert tuple(_rows(obs)[0]) == OBS_COLUMNS
    assert main(["identify", "-c", str(cfg), "-o", str(out), "--obs", str(obs), "--init-factor", "1.2"]) == EXIT_OK
    fit = _rows(out / "fit.csv")
    assert fit[0] == ["iter", "misfit", "step_norm", "p_lambda", "p_alpha"]
    assert abs(float(fit[-1][3]) - 0.5) <= 0.005 and abs(float(fit[-1][4]) - 2.0) <= 0.02


def test_identify_requires_seed_and_obs(cfg, tmp_path):
    assert main(["identify", "-c", str(cfg), "--synthesize", str(tmp_path / "o.csv")]) == EXIT_CONFIG
    assert main(["identify", "-c", str(cfg), "-o", str(tmp_path)]) == EXIT_CONFIG
    assert main(["identify", "-c", str(cfg), "--obs", str(tmp_path / "none.csv")]) == EXIT_CONFIG
    assert main(["identify", "-c", str(cfg), "--obs", "x", "--active", "mu"]) == EXIT_CONFIG


def test_galerkin_flat_and_compare(tmp_path):
    p = tmp_path / "flat.cfg"
    p.write_text(FLAT)
    out = tmp_path / "gal"
    assert main(["galerkin", "-c", str(p), "-o", str(out), "--modes", "3", "--compare"]) == EXIT_OK
    assert _rows(out / "galerkin_coefficients.csv")[0] == ["step", "t", "component", "p", "q", "r", "coefficient"]
    cmp_ = _rows(out / "galerkin_compare.csv")
    assert cmp_[0] == ["t", "l2_difference", "l2_fv", "relative"] and len(cmp_) == 22


def test_galerkin_rejects_staircase(cfg, tmp_path):
    assert main(["galerkin", "-c", str(cfg), "-o", str(tmp_path), "--modes", "2"]) == EXIT_CONFIG


def test_check_suite(tmp_path):
    out = tmp_path / "chk"
    assert main(["check", "--suite", "saturation", "--seed", "42", "-o", str(out)]) == EXIT_OK
    rows = _rows(out / "check_results.csv")
    assert tuple(rows[0]) == CHECK_COLUMNS
    assert len(rows) == 7 and all(r[-1] == "true" for r in rows[1:])


def test_check_failure_exit(monkeypatch, tmp_path):
    from po4dop import checks
    from po4dop.checks import _row
    monkeypatch.setitem(checks.SUITES, "saturation", lambda rng: [_row("saturation", "forced", 1.0, 0.0)])
    assert main(["check", "--suite", "saturation", "--seed", "1", "-o", str(tmp_path)]) == EXIT_CHECK


def test_config_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("params.nu = 1.5\n")
    assert main(["forward", "-c", str(p)]) == EXIT_CONFIG
    assert "0 < nu < 1" in capsys.readouterr().err
    p.write_text("params.nu = 0.5\nparams.nu = 0.5\n")
    assert main(["forward", "-c", str(p)]) == EXIT_CONFIG


def test_solver_failure_exit_1_flushes_report(cfg, tmp_path):
    p = tmp_path / "one.cfg"
    p.write_text(SMALL + "solver.max_iter = 2\n")
    out = tmp_path / "fail"
    assert main(["picard", "-c", str(p), "-o", str(out)]) == EXIT_SOLVER
    rows = _rows(out / "picard_report.csv")
    assert tuple(rows[0]) == PICARD_COLUMNS and len(rows) == 3


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "po4dop", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "po4dop" in r.stdout
    r = subprocess.run([sys.executable, "-m", "po4dop", "check"], capture_output=True, text=True)
    assert r.returncode == 2
