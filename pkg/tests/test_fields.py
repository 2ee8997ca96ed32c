import numpy as np
import pytest

from po4dop.fields import (Environment, ModelParams, ParameterError, StreamFunctionError, TracerState,
                           Trajectory, cell_divergence, default_stream_function, insolation_at,
                           interior_corner_mask, light_factor, random_stream_function, read_snapshot,
                           read_stream_function, stream_velocity, write_snapshot)
from po4dop.geometry import GridError, grid_from_depths


@pytest.fixture(scope="module")
def box():
    return grid_from_depths(np.full((4, 2), 60.0), 100.0, 50.0, 10.0, 100.0)


def test_params_defaults_and_validation():
    p = ModelParams()
    assert p.as_dict() == {"lambda": 0.5, "alpha": 2.0, "K_P": 0.5, "K_I": 30.0, "K_W": 0.02,
                           "beta": 1.0, "nu": 0.5}
    assert p.validate() is p
    with pytest.raises(ParameterError):
        ModelParams(K_P=0.0)
    with pytest.raises(ParameterError):
        ModelParams(nu=1.0)
    with pytest.raises(ParameterError):
        ModelParams(lam=0.0).validate()
    with pytest.raises(ParameterError):
        p.get("gamma")
    assert p.with_value("lambda", 0.7).lam == 0.7


def test_zero_stream_function_gives_zero_flux(box):
    psi = np.zeros((box.nx + 1, box.nz_max + 1))
    assert np.all(stream_velocity(box, psi) == 0.0)


def test_sine_stream_function_divergence_free(box):
    x = np.arange(box.nx + 1) * box.dx
    z = np.arange(box.nz_max + 1) * box.dz
    psi = np.outer(np.sin(np.pi * x / x[-1]), np.sin(np.pi * z / z[-1]))
    psi[np.abs(psi) < 1e-15] = 0.0
    flux = stream_velocity(box, psi)
    assert np.max(np.abs(cell_divergence(box, flux))) <= 1e-12 * np.max(np.abs(flux))


def test_point_stream_function_is_closed_circulation(box):
    psi = np.zeros((box.nx + 1, box.nz_max + 1))
    psi[2, 3] = 1.0
    flux = stream_velocity(box, psi)
    nz = np.flatnonzero(flux)
    # the same four faces in every y-row
    assert nz.size == 4 * box.ny
    assert np.all(cell_divergence(box, flux) == 0.0)


def test_boundary_flux_rejected(box):
    psi = np.zeros((box.nx + 1, box.nz_max + 1))
    psi[0, 2] = 1.0
    with pytest.raises(StreamFunctionError):
        stream_velocity(box, psi)


def test_random_stream_function_on_staircase(small_grid, rng):
    for _ in range(5):
        flux = stream_velocity(small_grid, random_stream_function(small_grid, rng))
        assert np.max(np.abs(cell_divergence(small_grid, flux))) <= 1e-12 * max(np.max(np.abs(flux)), 1.0)
    assert interior_corner_mask(small_grid).shape == (small_grid.ny, small_grid.nx + 1, small_grid.nz_max + 1)
    assert np.any(default_stream_function(small_grid, 1.0) != 0)


def test_stream_function_file(tmp_path, box):
    psi = np.zeros((box.nx + 1, box.nz_max + 1))
    psi[1:-1, 1:-1] = np.arange((box.nx - 1) * (box.nz_max - 1)).reshape(box.nx - 1, box.nz_max - 1)
    p = tmp_path / "psi.txt"
    p.write_text("# corners\n" + "\n".join(" ".join(repr(float(v)) for v in row) for row in psi.T) + "\n")
    back = read_stream_function(p, box)
    assert back.shape == (box.ny, box.nx + 1, box.nz_max + 1)
    assert np.array_equal(back[0], psi)
    p.write_text("0 1\n0 x\n")
    with pytest.raises(StreamFunctionError):
        read_stream_function(p, box)


def test_insolation_shapes(column_grid):
    v = np.zeros(column_grid.face_a.size)
    assert insolation_at(Environment(v, 1.0, I0=30.0), 0, 0.37) == 30.0
    env = Environment(v, 1.0, I0=30.0, light_shape="diurnal", day_length=1.0)
    assert insolation_at(env, 0, 0.0) == 30.0
    assert insolation_at(env, 0, 0.5) == 0.0


def test_light_factor_half_saturation_and_zero(column_grid):
    v = np.zeros(column_grid.face_a.size)
    p = ModelParams()
    top = int(np.argmin(column_grid.z_center))
    I = p.K_I * np.exp(column_grid.z_center[top] * p.K_W)
    assert light_factor(Environment(v, 1.0, I0=I), p, column_grid, top, 0.0) == pytest.approx(0.5, rel=1e-14)
    assert light_factor(Environment(v, 1.0, I0=0.0), p, column_grid, top, 0.0) == 0.0
    deep = int(np.argmax(column_grid.z_center))
    with pytest.raises(GridError):
        light_factor(Environment(v, 1.0), p, column_grid, deep, 0.0)


def test_environment_rejects_bad_inputs(column_grid):
    v = np.zeros(column_grid.face_a.size)
    with pytest.raises(ValueError):
        Environment(v, 0.0)
    with pytest.raises(ValueError):
        Environment(v, 1.0, light_shape="square")


def test_snapshot_round_trip(tmp_path, small_grid, rng):
    y = rng.standard_normal((2, small_grid.ncells))
    p = tmp_path / "snap.csv"
    write_snapshot(p, small_grid, y)
    back = read_snapshot(p, small_grid)
    assert np.array_equal(back.as_array(), y)


def test_trajectory_helpers(small_grid):
    s = TracerState.constant(small_grid, 2.0, 0.2)
    tr = Trajectory.constant(s, 4, 0.25)
    assert tr.steps == 4 and tr.T == 1.0
    assert np.allclose(tr.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert np.all((tr - tr).y == 0)
    assert len(list(tr)) == 5
