import numpy as np
import pytest

from po4dop.fields import ModelParams
from po4dop.identify import (Observation, SamplingPlan, gauss_newton, initial_guess, misfit_and_jacobian,
                             read_observations, relative_errors, sample, synthesize_observations,
                             write_fit, write_observations)
from po4dop.scenario import default_initial_state
from po4dop.solver import PicardConfig, picard_solve

T, STEPS = 1.0, 20


@pytest.fixture(scope="module")
def setup(small_grid, small_env):
    y0 = default_initial_state(small_grid)
    plan = SamplingPlan.regular(small_grid, STEPS, every_step=5, every_cell=3)
    return small_grid, small_env, y0, plan


def test_noiseless_observations_match_forward(setup):
    grid, env, y0, plan = setup
    obs = synthesize_observations(ModelParams(), env, grid, y0, plan, T, STEPS)
    traj, _ = picard_solve(y0, env, grid, ModelParams(), PicardConfig(), T, STEPS)
    assert np.array_equal(obs.value, sample(traj, plan))
    assert np.all(obs.sigma == 0)


def test_seeded_noise_deterministic_and_scaled(setup):
    grid, env, y0, plan = setup
    big = SamplingPlan(np.repeat(plan.t_index, 10), np.repeat(plan.cell, 10), np.repeat(plan.component, 10))
    assert len(big) >= 1000
    a = synthesize_observations(ModelParams(), env, grid, y0, big, T, STEPS, sigma=0.01, seed=7)
    b = synthesize_observations(ModelParams(), env, grid, y0, big, T, STEPS, sigma=0.01, seed=7)
    clean = synthesize_observations(ModelParams(), env, grid, y0, big, T, STEPS)
    assert np.array_equal(a.value, b.value)
    assert abs(np.std(a.value - clean.value) - 0.01) <= 0.001


def test_observation_validation(small_grid):
    with pytest.raises(ValueError):
        Observation(np.array([0]), np.array([0]), np.array([3]), np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        Observation(np.array([0]), np.array([0]), np.array([1]), np.array([1.0]), np.array([-1.0]))
    obs = Observation(np.array([99]), np.array([0]), np.array([1]), np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        obs.check(small_grid, STEPS)


def test_misfit_zero_at_truth_and_jacobian_fd(setup):
    grid, env, y0, plan = setup
    p = ModelParams()
    obs = synthesize_observations(p, env, grid, y0, plan, T, STEPS)
    r, J = misfit_and_jacobian(p, ["lambda", "alpha"], obs, env, grid, y0, T, STEPS)
    assert np.all(r == 0)
    cfg = PicardConfig(tol=1e-15, max_iter=200)
    for j, name in enumerate(["lambda", "alpha"]):
        d = 1e-4 * p.get(name)
        yp, _ = picard_solve(y0, env, grid, p.with_value(name, p.get(name) + d), cfg, T, STEPS)
        ym, _ = picard_solve(y0, env, grid, p.with_value(name, p.get(name) - d), cfg, T, STEPS)
        fd = (sample(yp, plan) - sample(ym, plan)) / (2 * d)
        assert np.max(np.abs(fd - J[:, j])) <= 1e-3 * np.max(np.abs(J[:, j]))


def test_duplicate_rows_kept(setup):
    grid, env, y0, plan = setup
    obs = synthesize_observations(ModelParams(), env, grid, y0, plan, T, STEPS)
    dup = Observation(*(np.concatenate([v, v[:1]]) for v in (obs.t_index, obs.cell, obs.component,
                                                              obs.value, obs.sigma)))
    r, _ = misfit_and_jacobian(ModelParams(lam=0.6), ["lambda"], dup, env, grid, y0, T, STEPS)
    assert r.size == len(obs) + 1 and r[-1] == r[0]


def test_gauss_newton_twin(setup):
    grid, env, y0, plan = setup
    truth = ModelParams()
    obs = synthesize_observations(truth, env, grid, y0, plan, T, STEPS)
    active = ["lambda", "alpha"]
    fit = gauss_newton(initial_guess(truth, active), active, obs, env, grid, y0, T, STEPS)
    assert fit.converged
    assert max(relative_errors(fit, truth).values()) <= 1e-6
    assert fit.misfits[-1] <= 1e-8 * fit.misfits[0]
    assert all(b <= a for a, b in zip(fit.misfits[:-1], fit.misfits[1:]))


def test_gauss_newton_from_truth(setup):
    grid, env, y0, plan = setup
    obs = synthesize_observations(ModelParams(), env, grid, y0, plan, T, STEPS, sigma=0.01, seed=3,
                                  relative=True)
    fit = gauss_newton(ModelParams(), ["lambda"], obs, env, grid, y0, T, STEPS)
    assert fit.converged and len(fit.misfits) <= 3


def test_observation_and_fit_files(tmp_path, setup):
    grid, env, y0, plan = setup
    obs = synthesize_observations(ModelParams(), env, grid, y0, plan, T, STEPS, sigma=0.1, seed=1)
    p = tmp_path / "obs.csv"
    write_observations(p, obs, grid)
    back = read_observations(p, grid)
    for name in ("t_index", "cell", "component", "value", "sigma"):
        assert np.array_equal(getattr(back, name), getattr(obs, name))
    p.write_text(p.read_text().replace("t_index", "time"))
    with pytest.raises(ValueError):
        read_observations(p, grid)
    fit = gauss_newton(ModelParams(), ["alpha"], obs, env, grid, y0, T, STEPS)
    write_fit(tmp_path / "fit.csv", fit)
    assert (tmp_path / "fit.csv").read_text().splitlines()[0] == "iter,misfit,step_norm,p_alpha"
