import csv

import pytest

from po4dop.checks import (CHECK_COLUMNS, SUITES, constants_rows, run_suite, write_check_rows,
                           write_constants)
from po4dop.solver import PicardConfig


def test_suites_registered():
    assert set(SUITES) == {"saturation", "lipschitz", "skew", "transport", "mass", "balance", "picard",
                           "energy", "tangent", "galerkin", "identify"}
    with pytest.raises(KeyError):
        run_suite("nope", 1)


@pytest.mark.parametrize("name", ["saturation", "skew", "balance", "transport"])
def test_fast_suites_pass_and_repeat(name):
    a = run_suite(name, 5)
    assert a and all(r.passed for r in a)
    assert a == run_suite(name, 5)


def test_check_csv(tmp_path):
    rows = run_suite("saturation", 3)
    p = tmp_path / "c.csv"
    write_check_rows(p, rows)
    data = list(csv.reader(open(p)))
    assert tuple(data[0]) == CHECK_COLUMNS and len(data) == len(rows) + 1


def test_constants(tmp_path, scenario):
    rows = dict(constants_rows(scenario, PicardConfig()))
    assert rows["L_d"] == pytest.approx(44 ** 0.5)
    assert rows["L_b"] == pytest.approx(20.0)
    assert rows["L_A"] == pytest.approx(0.5)
    assert rows["epsilon"] == pytest.approx(25.0)
    assert rows["C_B_empirical"] > 0
    write_constants(tmp_path / "k.csv", list(rows.items()))
    assert (tmp_path / "k.csv").read_text().splitlines()[0] == "name,value"
