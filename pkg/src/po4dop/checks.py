"""Property and oracle suites behind ``po4dop check``.

Every suite returns :class:`CheckRow` records ``(suite, check, value,
bound, passed)``.  All randomness derives from one seed, so a given seed
reproduces the CSV byte for byte.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import (PARAM_NAMES, Environment, ModelParams, Trajectory, TracerState,
                     random_stream_function, stream_velocity)
from .galerkin import build_galerkin, galerkin_solve, heat_decay_factor
from .geometry import Grid, GridConfig, build_grid, grid_from_depths
from .identify import SamplingPlan, gauss_newton, initial_guess, relative_errors, synthesize_observations
from .reaction import column_mass_balance, lipschitz_constants, reaction_terms, saturation
from .scenario import Scenario, default_scenario
from .solver import (EPS, ExternalForcing, PicardConfig, auto_weight, contraction_bound,
                     energy_constants, energy_estimate_check, picard_solve, solve_frozen, tangent_solve)
from .transport import (Norms, Operators, advection_skew_check, apply_B, discrete_C_B, empirical_C_B,
                        garding_check,
                        skew_scale, total_mass)

# rounding allowance for inequalities that hold exactly in real arithmetic
ROUND = 1e-12


@dataclass(frozen=True)
class CheckRow:
    suite: str
    check: str
    value: float
    bound: float
    passed: bool


def _row(suite, check, value, bound, passed=None) -> CheckRow:
    value, bound = float(value), float(bound)
    return CheckRow(suite, check, value, bound, bool(value <= bound if passed is None else passed))


# ---------------------------------------------------------------- random inputs


def random_grid(rng, max_cols: int = 5) -> Grid:
    """Staircase basin with random extents, layer thickness and dry columns."""
    dz = float(rng.choice([5.0, 10.0, 20.0]))
    he_layers = int(rng.integers(2, 8))
    nx, ny = int(rng.integers(1, max_cols + 1)), int(rng.integers(1, max_cols + 1))
    layers = rng.integers(1, 2 * he_layers + 3, size=(nx, ny))
    layers[rng.random((nx, ny)) < 0.15] = 0
    if not layers.any():
        layers[0, 0] = he_layers + 1
    dx, dy = float(rng.uniform(50, 200)), float(rng.uniform(50, 200))
    return grid_from_depths(layers * dz, dx, dy, dz, he_layers * dz)


def random_environment(grid: Grid, rng, kappa_range=(1.0, 200.0)) -> Environment:
    psi = random_stream_function(grid, rng, amplitude=float(rng.uniform(0, 3000)))
    if rng.random() < 0.5:
        kappa = float(np.exp(rng.uniform(*np.log(kappa_range))))
    else:
        kappa = np.exp(rng.uniform(*np.log(kappa_range), size=grid.ncells))
    return Environment(stream_velocity(grid, psi), kappa, I0=float(rng.uniform(0, 100)),
                       light_shape=str(rng.choice(["constant", "diurnal"])))


def random_params(rng) -> ModelParams:
    return ModelParams(lam=rng.uniform(0.05, 2), alpha=rng.uniform(0.1, 5), K_P=rng.uniform(0.05, 2),
                       K_I=rng.uniform(1, 60), K_W=rng.uniform(0.001, 0.1), beta=rng.uniform(0.2, 2),
                       nu=rng.uniform(0.05, 0.95))


def random_state(grid: Grid, rng, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal((2, grid.ncells))


# ---------------------------------------------------------------- suites


def suite_saturation(rng, n: int = 100_000) -> list[CheckRow]:
    rows = []
    for K in (0.1, 0.5, 30.0):
        # mix of the O(K) range and wide log-uniform magnitudes of both signs
        mag = np.concatenate([rng.uniform(-10 * K, 10 * K, n // 2),
                              rng.choice([-1, 1], n - n // 2) * 10 ** rng.uniform(-6, 6, n - n // 2)])
        x = rng.permutation(mag)
        y = x + rng.choice([-1, 1], n) * 10 ** rng.uniform(-8, 2, n) * K
        fx, fy = saturation(x, K), saturation(y, K)
        bound_viol = int(np.sum(np.abs(fx) > 1.0) + np.sum(np.abs(fy) > 1.0))
        # rounding of a difference of O(1) values is a few ulp
        lip = np.abs(fx - fy) - np.abs(x - y) / K
        lip_viol = int(np.sum(lip > 4 * EPS))
        rows.append(_row("saturation", f"bounded_by_1[K={K:g}]", bound_viol, 0))
        rows.append(_row("saturation", f"lipschitz_1/K[K={K:g}]", lip_viol, 0))
    return rows


def suite_lipschitz(rng, grids: int = 10, pairs: int = 100) -> list[CheckRow]:
    rows = []
    default = ModelParams()
    viol_d = viol_b = 0
    worst_d = worst_b = 0.0
    for g in range(grids):
        grid = random_grid(rng)
        env = random_environment(grid, rng)
        norms = Norms(grid)
        for p in range(pairs):
            params = default if p % 2 == 0 else random_params(rng)
            L = lipschitz_constants(params, grid)
            y = random_state(grid, rng, scale=float(10 ** rng.uniform(-1, 1)))
            if rng.random() < 0.5:
                z = y + random_state(grid, rng, scale=float(10 ** rng.uniform(-3, 0)))
            else:
                z = random_state(grid, rng, scale=float(10 ** rng.uniform(-1, 1)))
            t = float(rng.uniform(0, 1))
            ry, rz = reaction_terms(y, grid, env, params, t), reaction_terms(z, grid, env, params, t)
            dy = norms.l2(y - z)
            rd = norms.l2(ry.d - rz.d) / (L.L_d * dy)
            rb = norms.boundary_l2(ry.b - rz.b) / (L.L_b * dy)
            worst_d, worst_b = max(worst_d, rd), max(worst_b, rb)
            viol_d += rd > 1 + ROUND
            viol_b += rb > 1 + ROUND
    L = lipschitz_constants(default, default_scenario().grid)
    rows.append(_row("lipschitz", "L_d_default=sqrt(44)", abs(L.L_d - math.sqrt(44)), 1e-12))
    rows.append(_row("lipschitz", "L_b_default=20", abs(L.L_b - 20.0), 1e-12))
    rows.append(_row("lipschitz", "d_violations", viol_d, 0))
    rows.append(_row("lipschitz", "b_violations", viol_b, 0))
    rows.append(_row("lipschitz", "d_max_ratio", worst_d, 1 + ROUND))
    rows.append(_row("lipschitz", "b_max_ratio", worst_b, 1 + ROUND))
    return rows


def suite_skew(rng, samples: int = 100) -> list[CheckRow]:
    worst = 0.0
    viol = 0
    for _ in range(samples):
        grid = random_grid(rng)
        env = random_environment(grid, rng)
        w = rng.standard_normal(grid.ncells) * float(10 ** rng.uniform(-2, 2))
        scale = skew_scale(w, env)
        res = abs(advection_skew_check(w, env, grid))
        ratio = res / scale if scale > 0 else (0.0 if res == 0 else math.inf)
        worst = max(worst, ratio)
        viol += ratio > 1e-12
    return [_row("skew", "violations", viol, 0), _row("skew", "max_scaled_residual", worst, 1e-12)]


def suite_transport(rng, samples: int = 1000) -> list[CheckRow]:
    """Garding inequality, monotonicity of B and the sampled boundedness constant."""
    garding_viol = mono_viol = 0
    worst_margin = math.inf
    per_grid = 50
    cb_viol = cb_order_viol = 0
    for g in range(samples // per_grid):
        grid = random_grid(rng)
        env = random_environment(grid, rng)
        ops = Operators(grid, env)
        C_B = discrete_C_B(env, grid, ops)
        C_B_emp = empirical_C_B(env, grid, samples=20, rng=rng, ops=ops)
        cb_order_viol += C_B_emp > C_B * (1 + 1e-9)
        for _ in range(per_grid):
            u = random_state(grid, rng)
            w = random_state(grid, rng)
            gr = garding_check(u, env, grid, ops)
            garding_viol += not gr.holds
            scale = max(abs(gr.lhs), 1e-300)
            worst_margin = min(worst_margin, gr.margin / scale)
            mono_viol += apply_B(u - w, u - w, env, grid, ops) < -ROUND * ops.norms.h1(u - w) ** 2 * env.kappa_max
            if abs(apply_B(u, w, env, grid, ops)) > C_B * ops.norms.h1(u) * ops.norms.h1(w) * (1 + 1e-9):
                cb_viol += 1
    return [_row("transport", "garding_violations", garding_viol, 0),
            _row("transport", "garding_min_relative_margin", -worst_margin, ROUND),
            _row("transport", "monotone_violations", mono_viol, 0),
            _row("transport", "C_B_bound_violations", cb_viol, 0),
            _row("transport", "C_B_empirical_above_discrete", cb_order_viol, 0)]


def suite_mass(rng, scenario: Scenario | None = None) -> list[CheckRow]:
    s = scenario or default_scenario()
    traj, _ = picard_solve(s.y0, s.env, s.grid, s.params, PicardConfig(), s.T, s.steps)
    m = np.array([total_mass(y, s.grid) for y in traj.y])
    drift = float(np.max(np.abs(m - m[0])) / abs(m[0]))
    ops = Operators(s.grid, s.env)
    ones = np.ones(s.grid.ncells)
    rowsum = float(np.max(np.abs(ops.D @ ones)) + np.max(np.abs(ops.K @ ones)))
    colsum = float(np.max(np.abs(ones @ ops.D)) + np.max(np.abs(ones @ ops.K)))
    ref = float(abs(ops.D).sum(axis=1).max() + abs(ops.K).sum(axis=1).max())
    return [_row("mass", "relative_total_drift", drift, 1e-10),
            _row("mass", "operator_row_sums", rowsum / ref, 1e-13),
            _row("mass", "operator_column_sums", colsum / ref, 1e-13)]


def suite_balance(rng, grids: int = 10, states: int = 20) -> list[CheckRow]:
    worst = 0.0
    viol = 0
    cases = [(default_scenario().grid, None)] + [(random_grid(rng), None) for _ in range(grids)]
    for grid, _ in cases:
        env = random_environment(grid, rng)
        for k in range(states):
            params = ModelParams() if k % 2 == 0 else random_params(rng)
            y = rng.uniform(-5, 5, (2, grid.ncells))
            res = np.abs(column_mass_balance(y, grid, env, params, float(rng.uniform(0, 1))))
            # per unit column area, relative to the scale alpha * h_max of the column budget
            scaled = res / (grid.dx * grid.dy) / (params.alpha * grid.h_max)
            worst = max(worst, float(np.max(scaled)))
            viol += int(np.sum(scaled > 1e-13))
    return [_row("balance", "column_violations", viol, 0), _row("balance", "max_scaled_residual", worst, 1e-13)]


def suite_picard(rng, scenario: Scenario | None = None) -> list[CheckRow]:
    s = scenario or default_scenario()
    cfg = PicardConfig()
    traj, rep = picard_solve(s.y0, s.env, s.grid, s.params, cfg, s.T, s.steps)
    ratio = rep.asymptotic_ratio()
    above = rep.ratios_above_floor()
    # second, different first iterate: a perturbed constant-in-time state
    z0 = Trajectory.constant(s.y0.as_array() * (1.0 + 0.5 * rng.random((2, s.grid.ncells))), s.steps, s.dt)
    traj2, rep2 = picard_solve(s.y0, s.env, s.grid, s.params, cfg, s.T, s.steps, z0=z0)
    vol = s.grid.volume
    diff = float(np.max(np.sqrt(np.sum((traj.y - traj2.y) ** 2 * vol, axis=(1, 2)))))
    ref = float(np.max(np.sqrt(np.sum(traj.y ** 2 * vol, axis=(1, 2)))))
    return [_row("picard", "not_converged", 0 if rep.converged else 1, 0),
            _row("picard", "L_A", rep.L_A, 1.0, passed=True),
            _row("picard", "asymptotic_ratio", ratio, rep.bound, passed=bool(ratio <= rep.bound)),
            _row("picard", "max_ratio_above_floor", max(above) if above else 0.0, 1.0,
                 passed=bool(above) and max(above) < 1.0),
            _row("picard", "uniqueness_relative_difference", diff / ref, 10 * cfg.tol)]


def suite_energy(rng, runs: int = 10, scenario: Scenario | None = None) -> list[CheckRow]:
    s = scenario or default_scenario()
    rows = []
    linear_viol = nonlin_viol = 0
    worst = -math.inf
    zero = ModelParams(lam=0.0, alpha=0.0)
    for r in range(runs):
        # linear runs: d = b = 0, random forcing and initial state, random diffusivity scale
        kappa = float(np.exp(rng.uniform(np.log(0.1), np.log(200.0))))
        env = Environment(s.env.velocity, kappa, I0=s.env.I0)
        y0 = rng.standard_normal((2, s.grid.ncells))
        f = rng.standard_normal((s.steps + 1, 2, s.grid.ncells)) * float(10 ** rng.uniform(-2, 1))
        z = Trajectory(np.zeros((s.steps + 1, 2, s.grid.ncells)), s.dt)
        y = solve_frozen(z, env, s.grid, zero, y0, rhs=ExternalForcing(f=f))
        rep = energy_estimate_check(y, f, y0, 0.0, env.kappa_min / 4, env, s.grid)
        linear_viol += not rep.passed
        worst = max(worst, rep.lhs / rep.rhs)
    for r in range(runs):
        y0 = s.y0.as_array() * (1.0 + 0.5 * rng.random((2, s.grid.ncells)))
        traj, _ = picard_solve(y0, s.env, s.grid, s.params, PicardConfig(), s.T, s.steps)
        L1 = lipschitz_constants(s.params, s.grid).L1
        rep = energy_estimate_check(traj, None, y0, L1, s.env.kappa_min / 4, s.env, s.grid)
        nonlin_viol += not rep.passed
        worst = max(worst, rep.lhs / rep.rhs)
    k = energy_constants(1.0, 0.125, 1.0, 0.5)
    rows.append(_row("energy", "linear_violations", linear_viol, 0))
    rows.append(_row("energy", "nonlinear_violations", nonlin_viol, 0))
    rows.append(_row("energy", "max_lhs_over_rhs", worst, 1.0))
    rows.append(_row("energy", "C1_at_eps=kappa/4", abs(k.C1 - 4 * math.exp(5)) / (4 * math.exp(5)), 1e-14))
    return rows


def suite_tangent(rng, scenario: Scenario | None = None, names=PARAM_NAMES) -> list[CheckRow]:
    """Tangent trajectories against central differences of converged forward solves.

    The error is reported at delta = 1e-4 p.  At that step the difference
    quotient is limited by forward-solve rounding (about eps / delta), so
    the convergence order is measured where truncation dominates, between
    delta = 1e-2 p and 5e-3 p.
    """
    s = scenario or default_scenario()
    cfg = PicardConfig(tol=1e-15, max_iter=200)
    y, _ = picard_solve(s.y0, s.env, s.grid, s.params, cfg, s.T, s.steps)

    def fd(name, d):
        p = s.params.get(name)
        yp, _ = picard_solve(s.y0, s.env, s.grid, s.params.with_value(name, p + d), cfg, s.T, s.steps)
        ym, _ = picard_solve(s.y0, s.env, s.grid, s.params.with_value(name, p - d), cfg, s.T, s.steps)
        return (yp.y - ym.y) / (2 * d)

    rows = []
    for name in names:
        h = tangent_solve(y, name, s.env, s.grid, s.params).y
        hmax = np.max(np.abs(h))
        p = s.params.get(name)
        err = np.max(np.abs(fd(name, 1e-4 * p) - h)) / hmax
        e1 = np.max(np.abs(fd(name, 1e-2 * p) - h)) / hmax
        e2 = np.max(np.abs(fd(name, 5e-3 * p) - h)) / hmax
        order = math.log2(e1 / e2)
        rows.append(_row("tangent", f"max_rel_error[{name}]", err, 1e-3))
        rows.append(_row("tangent", f"fd_order[{name}]", order, 1.9, passed=bool(order >= 1.9)))
    return rows


def galerkin_crossval(levels: int = 4, depth: float = 150.0, he_bar: float = 100.0,
                      params: ModelParams | None = None, kappa: float = 100.0):
    """FV Picard vs Galerkin on a flat column under simultaneous dz/dt/mode refinement.

    Returns ``(dz, steps, relative L2 discrepancy)`` per level; the error is
    the sup over time of the L2 difference relative to the sup L2 norm.
    """
    params = params or ModelParams()
    out = []
    for r in range(levels):
        dz, steps = 10.0 / 2 ** r, 20 * 2 ** r
        grid = grid_from_depths([[depth]], 100.0, 100.0, dz, he_bar)
        env = Environment(np.zeros(grid.face_a.size), kappa)
        z = grid.z_center
        y0 = TracerState(2.0 * (1 + 0.2 * np.cos(np.pi * z / depth)),
                         0.2 * (1 + 0.2 * np.cos(2 * np.pi * z / depth)))
        fv, _ = picard_solve(y0, env, grid, params, PicardConfig(), 1.0, steps)
        gt = galerkin_solve(grid.nz_max, env, grid, params, y0, 1.0, steps).grid_trajectory()
        n = Norms(grid)
        err = max(n.l2(a - b) for a, b in zip(fv.y, gt.y)) / max(n.l2(a) for a in fv.y)
        out.append((dz, steps, err))
    return out


def heat_decay_error(kappa: float = 100.0, steps: int = 10, dt: float = 0.01) -> float:
    """Max relative deviation of Galerkin mode amplitudes from ``(1 + kappa mu dt)^-m``."""
    grid = build_grid(GridConfig(4, 3, 100.0, 80.0, 10.0, 20.0, np.full((4, 3), 50.0)))
    env = Environment(np.zeros(grid.face_a.size), kappa)
    sys_ = build_galerkin(grid, env, 4)
    zero = ModelParams(lam=0.0, alpha=0.0)
    worst = 0.0
    for m in (1, 5, len(sys_.modes) - 1):
        y0 = np.stack([sys_.basis[:, m], 0.5 * sys_.basis[:, m]])
        u = galerkin_solve(4, env, grid, zero, y0, steps * dt, steps, system=sys_).u
        for k in range(steps + 1):
            expect = heat_decay_factor(kappa, sys_.eigenvalues[m], dt, k)
            worst = max(worst, abs(u[k, 0, m] - expect) / expect, abs(u[k, 1, m] - 0.5 * expect) / (0.5 * expect))
    return worst


def suite_galerkin(rng) -> list[CheckRow]:
    rows = [_row("galerkin", "heat_decay_rel_error", heat_decay_error(), 1e-12)]
    levels = galerkin_crossval()
    errs = [e for _, _, e in levels]
    for (dz, steps, e) in levels:
        rows.append(_row("galerkin", f"discrepancy[dz={dz:g},steps={steps}]", e, math.inf, passed=True))
    monotone = all(b < a for a, b in zip(errs[:-1], errs[1:]))
    order = math.log2(errs[-2] / errs[-1])
    rows.append(_row("galerkin", "monotone_decrease", 0 if monotone else 1, 0))
    rows.append(_row("galerkin", "observed_order", order, 0.9, passed=bool(order >= 0.9)))
    return rows


def suite_identify(rng, scenario: Scenario | None = None) -> list[CheckRow]:
    s = scenario or default_scenario()
    active = ["lambda", "alpha"]
    plan = SamplingPlan.regular(s.grid, s.steps)
    seed = int(rng.integers(2 ** 31))
    rows = []
    for sigma, bound in ((0.0, 0.01), (0.01, 0.05)):
        obs = synthesize_observations(s.params, s.env, s.grid, s.y0, plan, s.T, s.steps, sigma=sigma,
                                      seed=seed, relative=True)
        fit = gauss_newton(initial_guess(s.params, active), active, obs, s.env, s.grid, s.y0, s.T, s.steps)
        errs = relative_errors(fit, s.params)
        for n in active:
            rows.append(_row("identify", f"rel_error[{n},noise={sigma:g}]", errs[n], bound))
    return rows


SUITES: dict[str, Callable] = {
    "saturation": suite_saturation,
    "lipschitz": suite_lipschitz,
    "skew": suite_skew,
    "transport": suite_transport,
    "mass": suite_mass,
    "balance": suite_balance,
    "picard": suite_picard,
    "energy": suite_energy,
    "tangent": suite_tangent,
    "galerkin": suite_galerkin,
    "identify": suite_identify,
}


def run_suite(name: str, seed: int) -> list[CheckRow]:
    """Run one suite (or ``all``) with a generator seeded per suite name."""
    if name == "all":
        return [r for n in SUITES for r in run_suite(n, seed)]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; expected one of {', '.join(SUITES)} or all")
    # independent stream per suite so running one suite alone reproduces its rows in "all"
    rng = np.random.default_rng([seed, sorted(SUITES).index(name)])
    return SUITES[name](rng)


CHECK_COLUMNS = ("suite", "check", "value", "bound", "passed")


def write_check_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CHECK_COLUMNS)
        for r in rows:
            wr.writerow([r.suite, r.check, repr(r.value), repr(r.bound), str(r.passed).lower()])


def constants_rows(scenario: Scenario, cfg: PicardConfig, seed: int = 0) -> list[tuple[str, float]]:
    s = scenario
    L = lipschitz_constants(s.params, s.grid)
    c = cfg.resolve(L.L1, s.T, s.env.kappa_min)
    k = energy_constants(L.L1, c.epsilon, s.T, s.env.kappa_min)
    L_A = contraction_bound(L.L1, c.epsilon, s.T, s.env.kappa_min, c.weight_C) if L.L1 > 0 else 0.0
    C_B = empirical_C_B(s.env, s.grid, samples=200, rng=seed)
    return [("L_d", L.L_d), ("L_b", L.L_b), ("c_tau", L.c_tau), ("L1", L.L1), ("epsilon", c.epsilon),
            ("weight_C", c.weight_C), ("auto_weight_C", auto_weight(L.L1, c.epsilon, s.T, s.env.kappa_min)),
            ("L_A", L_A), ("c1", k.c1), ("C1", k.C1), ("C2", k.C2), ("C", k.C),
            ("kappa_min", s.env.kappa_min), ("kappa_max", s.env.kappa_max), ("C_B_empirical", C_B)]


def write_constants(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("name", "value"))
        for n, v in rows:
            wr.writerow([n, repr(float(v))])
