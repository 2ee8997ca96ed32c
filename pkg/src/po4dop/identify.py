"""Twin-experiment parameter identification with tangent-linear Jacobians."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fields import PARAM_NAMES, Environment, ModelParams, ParameterError, Trajectory
from .geometry import Grid
from .solver import LinearStepper, PicardConfig, picard_solve, tangent_solve

PARAM_FLOOR = 1e-8


@dataclass(frozen=True)
class Observation:
    """Point samples of the tracer trajectory.

    ``component`` is 1 (phosphate) or 2 (DOP); ``cell`` indexes wet cells.
    """

    t_index: np.ndarray
    cell: np.ndarray
    component: np.ndarray
    value: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        n = len(self.t_index)
        for name in ("cell", "component", "value", "sigma"):
            if len(getattr(self, name)) != n:
                raise ValueError("observation fields must have equal length")
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("sigma must be >= 0")
        if np.any(~np.isin(self.component, (1, 2))):
            raise ValueError("component must be 1 or 2")

    def __len__(self) -> int:
        return len(self.t_index)

    def check(self, grid: Grid, steps: int) -> None:
        if np.any((self.t_index < 0) | (self.t_index > steps)):
            raise ValueError(f"time indices must lie in [0, {steps}]")
        if np.any((self.cell < 0) | (self.cell >= grid.ncells)):
            raise ValueError("cell index out of range")


@dataclass(frozen=True)
class SamplingPlan:
    t_index: np.ndarray
    cell: np.ndarray
    component: np.ndarray

    @classmethod
    def regular(cls, grid: Grid, steps: int, every_step: int = 10, every_cell: int = 7,
                components=(1, 2)) -> "SamplingPlan":
        """Tensor plan: every ``every_step``-th level after t = 0, every ``every_cell``-th cell."""
        ts = np.arange(every_step, steps + 1, every_step)
        cells = np.arange(0, grid.ncells, every_cell)
        T, C, K = np.meshgrid(ts, cells, np.asarray(components), indexing="ij")
        return cls(T.ravel(), C.ravel(), K.ravel())

    def __len__(self) -> int:
        return len(self.t_index)


def sample(traj: Trajectory | np.ndarray, plan) -> np.ndarray:
    y = traj.y if isinstance(traj, Trajectory) else np.asarray(traj)
    return y[plan.t_index, plan.component - 1, plan.cell]


def synthesize_observations(true_params: ModelParams, env: Environment, grid: Grid, y0,
                            plan: SamplingPlan, T: float, steps: int, sigma: float = 0.0,
                            seed: int = 0, relative: bool = False,
                            cfg: PicardConfig | None = None) -> Observation:
    """Forward solve at ``true_params``, sample and add seeded Gaussian noise.

    With ``relative`` the standard deviation of each sample is ``sigma``
    times its noiseless value; otherwise ``sigma`` is absolute.
    """
    if len(plan) == 0:
        raise ValueError("sampling plan is empty")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    traj, _ = picard_solve(y0, env, grid, true_params, cfg or PicardConfig(), T, steps)
    clean = sample(traj, plan)
    sd = sigma * np.abs(clean) if relative else np.full(clean.shape, float(sigma))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(clean.shape) * sd
    return Observation(plan.t_index.copy(), plan.cell.copy(), plan.component.copy(), clean + noise, sd)


def misfit_and_jacobian(params: ModelParams, active, obs: Observation, env: Environment, grid: Grid,
                        y0, T: float, steps: int, cfg: PicardConfig | None = None,
                        stepper: LinearStepper | None = None):
    """Residual ``model(p) - observed`` and its Jacobian columns from tangent solves.

    Returns ``(r, J)`` with ``J`` of shape ``(len(obs), len(active))``,
    columns in the order of ``active``.
    """
    active = list(active)
    for name in active:
        if name not in PARAM_NAMES:
            raise ValueError(f"unknown parameter {name!r}")
    obs.check(grid, steps)
    stepper = stepper or LinearStepper(grid, env, T / steps)
    traj, _ = picard_solve(y0, env, grid, params, cfg or PicardConfig(), T, steps, stepper=stepper)
    r = sample(traj, obs) - obs.value
    J = np.empty((len(obs), len(active)))
    for j, name in enumerate(active):
        h = tangent_solve(traj, name, env, grid, params, stepper=stepper)
        J[:, j] = sample(h, obs)
    return r, J


def _misfit(params, obs, env, grid, y0, T, steps, cfg, stepper) -> float:
    traj, _ = picard_solve(y0, env, grid, params, cfg, T, steps, stepper=stepper)
    r = sample(traj, obs) - obs.value
    return 0.5 * float(r @ r)


@dataclass
class GaussNewtonOptions:
    max_iter: int = 30
    step_tol: float = 1e-6
    stagnation: float = 1e-12
    max_halvings: int = 30
    levenberg: float = 1e-10


@dataclass
class FitResult:
    p_star: ModelParams
    active: list[str]
    misfits: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)
    history: list[dict[str, float]] = field(default_factory=list)
    converged: bool = False

    def recovered(self) -> dict[str, float]:
        return {n: self.p_star.get(n) for n in self.active}

    def rows(self) -> list[tuple]:
        out = []
        for it, (m, s, p) in enumerate(zip(self.misfits, self.step_norms, self.history)):
            out.append((it, m, s) + tuple(p[n] for n in self.active))
        return out


def _apply(params: ModelParams, active, values) -> ModelParams:
    p = params
    for name, v in zip(active, values):
        p = p.with_value(name, float(v))
    return p


def gauss_newton(p0: ModelParams, active, obs: Observation, env: Environment, grid: Grid, y0,
                 T: float, steps: int, options: GaussNewtonOptions | None = None,
                 cfg: PicardConfig | None = None) -> FitResult:
    """Damped Gauss-Newton with step halving on the misfit ``0.5 |r|^2``.

    The normal equations are solved in parameter-scaled coordinates with a
    small Levenberg term when the scaled system is near-singular.
    """
    opt = options or GaussNewtonOptions()
    cfg = cfg or PicardConfig()
    active = list(active)
    stepper = LinearStepper(grid, env, T / steps)
    p = p0
    x = np.array([p.get(n) for n in active])
    res = FitResult(p, active)
    for it in range(opt.max_iter + 1):
        r, J = misfit_and_jacobian(p, active, obs, env, grid, y0, T, steps, cfg, stepper)
        f = 0.5 * float(r @ r)
        if it == 0:
            res.misfits.append(f)
            res.step_norms.append(0.0)
            res.history.append(dict(zip(active, x)))
        if f == 0.0:
            res.converged = True
            break
        if it == opt.max_iter:
            break
        scale = np.maximum(np.abs(x), PARAM_FLOOR)
        Js = J * scale
        H = Js.T @ Js
        g = Js.T @ r
        cond = np.linalg.cond(H)
        if not np.isfinite(cond) or cond > 1e12:
            H = H + opt.levenberg * np.trace(H) * np.eye(len(active))
        step = -np.linalg.solve(H, g) * scale
        t = 1.0
        accepted = False
        for _ in range(opt.max_halvings):
            xn = np.maximum(x + t * step, PARAM_FLOOR)
            try:
                pn = _apply(p, active, xn).validate()
            except ParameterError:
                t *= 0.5
                continue
            fn = _misfit(pn, obs, env, grid, y0, T, steps, cfg, stepper)
            if fn < f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no decrease possible along the Gauss-Newton direction: misfit stagnated
            res.converged = True
            break
        snorm = float(np.linalg.norm(xn - x))
        x, p = xn, pn
        res.misfits.append(fn)
        res.step_norms.append(snorm)
        res.history.append(dict(zip(active, x)))
        res.p_star = p
        if snorm <= opt.step_tol * np.linalg.norm(x) or (f - fn) <= opt.stagnation * f:
            res.converged = True
            break
    res.p_star = p
    return res


OBS_COLUMNS = ("t_index", "i", "j", "k", "component", "value", "sigma")


def write_observations(path, obs: Observation, grid: Grid) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(OBS_COLUMNS)
        for t, c, comp, v, s in zip(obs.t_index, obs.cell, obs.component, obs.value, obs.sigma):
            wr.writerow([int(t), int(grid.cell_i[c]), int(grid.cell_j[c]), int(grid.cell_k[c]),
                         int(comp), repr(float(v)), repr(float(s))])


def read_observations(path, grid: Grid) -> Observation:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or tuple(rd.fieldnames) != OBS_COLUMNS:
            raise ValueError(f"observation file must have header {','.join(OBS_COLUMNS)}")
        cols = {k: [] for k in ("t", "cell", "comp", "v", "s")}
        for n, row in enumerate(rd, start=2):
            i, j, k = int(row["i"]), int(row["j"]), int(row["k"])
            if not (0 <= i < grid.nx and 0 <= j < grid.ny and 0 <= k < grid.nz_max) \
                    or grid.index[i, j, k] < 0:
                raise ValueError(f"line {n}: ({i}, {j}, {k}) is not a wet cell")
            cols["t"].append(int(row["t_index"]))
            cols["cell"].append(int(grid.index[i, j, k]))
            cols["comp"].append(int(row["component"]))
            cols["v"].append(float(row["value"]))
            cols["s"].append(float(row["sigma"]))
    if not cols["t"]:
        raise ValueError("observation file holds no samples")
    return Observation(np.array(cols["t"]), np.array(cols["cell"]), np.array(cols["comp"]),
                       np.array(cols["v"]), np.array(cols["s"]))


def write_fit(path, fit: FitResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "misfit", "step_norm"] + [f"p_{n}" for n in fit.active])
        for row in fit.rows():
            wr.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def relative_errors(fit: FitResult, truth: ModelParams) -> dict[str, float]:
    return {n: abs(fit.p_star.get(n) - truth.get(n)) / abs(truth.get(n)) for n in fit.active}


def initial_guess(truth: ModelParams, active, factor: float = 1.2) -> ModelParams:
    p = truth
    for n in active:
        p = p.with_value(n, factor * truth.get(n))
    return p


__all__ = ["Observation", "SamplingPlan", "FitResult", "GaussNewtonOptions", "synthesize_observations",
           "misfit_and_jacobian", "gauss_newton", "write_observations", "read_observations",
           "write_fit", "relative_errors", "initial_guess", "sample"]
