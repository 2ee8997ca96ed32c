"""Implicit-Euler time stepping, the Picard iteration and the energy estimate.

Every step solves::

    (M/dt + D + K) y_{k+1} + M m(y_{k+1}) = M/dt y_k + rhs

with ``M`` the diagonal of cell volumes, ``D`` diffusion, ``K`` skew
advection and ``m`` the optional monotone term.  The matrix is factorized
once per (grid, environment, dt) and reused by every step, every Picard
iteration and every tangent solve.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import Environment, ModelParams, Trajectory, TracerState, as_pair
from .geometry import Grid
from .reaction import lipschitz_constants, monotone_derivative, monotone_term, reaction_terms
from .tangent import param_source, state_jacobian
from .transport import Norms, Operators

LINEAR_RTOL = 1e-12
EPS = np.finfo(float).eps


class SolverError(RuntimeError):
    """Raised when a linear, Newton or Picard iteration fails; carries diagnostics."""

    def __init__(self, message: str, history=None, report=None):
        super().__init__(message)
        self.history = list(history or [])
        self.report = report


class LinearStepper:
    """Factorized implicit-Euler step for one (grid, environment, dt)."""

    def __init__(self, grid: Grid, env: Environment, dt: float, gamma: float = 0.0,
                 ops: Operators | None = None):
        if dt <= 0:
            raise ValueError("dt must be > 0")
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        self.grid, self.env, self.dt, self.gamma = grid, env, dt, gamma
        self.ops = ops or Operators(grid, env)
        self.vol = grid.volume
        self.matrix = (sp.diags(self.vol / dt) + self.ops.A).tocsc()
        self._lu = splu(self.matrix)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(M/dt + A) x = rhs`` row-wise to relative residual <= 1e-12."""
        rhs = np.atleast_2d(rhs)
        out = np.empty_like(rhs, dtype=float)
        for c, b in enumerate(rhs):
            x = self._lu.solve(b)
            scale = max(np.linalg.norm(b), EPS)
            history = [np.linalg.norm(b - self.matrix @ x) / scale]
            # iterative refinement; one sweep is normally enough when needed at all
            while history[-1] > LINEAR_RTOL and len(history) < 5:
                x = x + self._lu.solve(b - self.matrix @ x)
                history.append(np.linalg.norm(b - self.matrix @ x) / scale)
            if history[-1] > LINEAR_RTOL:
                raise SolverError("linear solve did not reach relative residual 1e-12", history)
            out[c] = x
        return out

    def step(self, y_k, rhs) -> np.ndarray:
        """Advance ``y_k`` given the integrated right-hand side ``rhs`` (pair)."""
        y_k = as_pair(y_k)
        b = self.vol * y_k / self.dt + rhs
        y = self.solve(b)
        if self.gamma > 0:
            y = self._newton(y, b)
        return y

    def _newton(self, y: np.ndarray, b: np.ndarray) -> np.ndarray:
        # F(y) = (M/dt + A) y + M m(y) - b; the monotone part has a diagonal Jacobian
        scale = max(np.linalg.norm(b), EPS)
        history = []
        for _ in range(50):
            r = self.matrix @ y.T
            res = b - (r.T + self.vol * monotone_term(y, self.gamma))
            history.append(np.linalg.norm(res) / scale)
            if history[-1] <= LINEAR_RTOL:
                return y
            dm = monotone_derivative(y, self.gamma)
            for c in range(2):
                J = (self.matrix + sp.diags(self.vol * dm[c])).tocsc()
                y[c] = y[c] + splu(J).solve(res[c])
        raise SolverError("Newton iteration for the monotone term did not converge", history)


def linear_step(y_k, source, dt: float, env: Environment, grid: Grid, gamma: float = 0.0,
                stepper: LinearStepper | None = None) -> TracerState:
    """One implicit-Euler step with a per-cell source density ``source`` (pair).

    Solves ``(M/dt + D + K) y + M m(y) = M/dt y_k + M source``.
    """
    stepper = stepper or LinearStepper(grid, env, dt, gamma)
    rhs = grid.volume * as_pair(source)
    return TracerState.from_array(stepper.step(y_k, rhs))


@dataclass(frozen=True)
class ExternalForcing:
    """Optional inhomogeneities ``f`` (per-cell density) and ``g`` (per facet), shape ``(steps+1, 2, .)``."""

    f: np.ndarray | None = None
    g: np.ndarray | None = None

    def functional(self, grid: Grid, ops: Operators, k: int) -> np.ndarray:
        out = np.zeros((2, grid.ncells))
        if self.f is not None:
            out += grid.volume * self.f[k]
        if self.g is not None:
            out += ops.boundary_functional(self.g[k])
        return out


def frozen_rhs(y, grid: Grid, env: Environment, params: ModelParams, t: float,
               ops: Operators) -> np.ndarray:
    """Integrated right-hand side ``-(M d(y) + Gamma b(y))``."""
    r = reaction_terms(y, grid, env, params, t)
    return -(grid.volume * r.d + ops.boundary_functional(r.b))


def solve_frozen(z: Trajectory, env: Environment, grid: Grid, params: ModelParams, y0,
                 rhs: ExternalForcing | None = None, gamma: float = 0.0,
                 stepper: LinearStepper | None = None) -> Trajectory:
    """Linear parabolic solve with the coupling terms frozen along ``z`` at the new time level."""
    stepper = stepper or LinearStepper(grid, env, z.dt, gamma)
    if not math.isclose(stepper.dt, z.dt, rel_tol=1e-12):
        raise ValueError("stepper and trajectory time steps differ")
    ops = stepper.ops
    y = np.empty_like(z.y)
    y[0] = as_pair(y0)
    times = z.times
    for k in range(1, z.steps + 1):
        b = frozen_rhs(z.y[k], grid, env, params, times[k], ops)
        if rhs is not None:
            b = b + rhs.functional(grid, ops, k)
        y[k] = stepper.step(y[k - 1], b)
    return Trajectory(y, z.dt)


def forward_solve(y0, env: Environment, grid: Grid, params: ModelParams, T: float, steps: int,
                  cfg: "PicardConfig | None" = None, z0: Trajectory | None = None):
    """Nonlinear forward solve via :func:`picard_solve`; returns ``(trajectory, report)``."""
    return picard_solve(y0, env, grid, params, cfg or PicardConfig(), T, steps, z0=z0)


# ---------------------------------------------------------------- Picard


def weighted_norm(delta: Trajectory, C: float, norms: Norms | None = None, grid: Grid | None = None) -> float:
    """``sqrt(max_k |delta_k|^2 exp(-C t_k))``; may underflow to 0, see :func:`log_weighted_norm`."""
    return float(np.exp(log_weighted_norm(delta, C, norms, grid)))


def log_weighted_norm(delta: Trajectory, C: float, norms: Norms | None = None,
                      grid: Grid | None = None) -> float:
    """Natural log of the weighted norm, safe for weights far below the float range."""
    return shifted_log_weighted_norm(delta, C, norms, grid) - weight_shift(delta, C)


def weight_shift(traj: Trajectory, C: float) -> float:
    """``C t_1 / 2``: common offset that keeps log weighted norms well-conditioned."""
    return 0.5 * C * traj.dt


def shifted_log_weighted_norm(delta: Trajectory, C: float, norms: Norms | None = None,
                              grid: Grid | None = None) -> float:
    """``log |delta|_C + C t_1 / 2``.

    For large ``C`` the plain log loses every digit of ``log |delta_k|`` to
    the weight; the shifted value keeps them, so ratios between iterates on
    the same time grid stay exact.
    """
    if C < 0:
        raise ValueError("C must be >= 0")
    vals = _l2_series(delta, norms, grid)
    with np.errstate(divide="ignore"):
        logs = np.log(vals) - 0.5 * C * (delta.times - delta.dt)
    return float(np.max(logs))


def _l2_series(traj: Trajectory, norms: Norms | None, grid: Grid | None) -> np.ndarray:
    if norms is not None:
        vol = norms.grid.volume
    elif grid is not None:
        vol = grid.volume
    else:
        vol = 1.0
    return np.sqrt(np.sum(traj.y * traj.y * vol, axis=(1, 2)))


def _zero_initial(y: np.ndarray) -> np.ndarray:
    out = y.copy()
    out[0] = 0.0
    return out


def contraction_bound(L1: float, epsilon: float, T: float, kappa_min: float, C: float) -> float:
    """``L_A = sqrt((1/C) (L1^2 / (2 eps)) exp(2 T kappa_min))``."""
    for name, v in (("epsilon", epsilon), ("T", T), ("kappa_min", kappa_min), ("C", C)):
        if v <= 0:
            raise ValueError(f"{name} must be > 0")
    if L1 < 0:
        raise ValueError("L1 must be >= 0")
    if L1 == 0:
        return 0.0
    # log form: exp(2 T kappa_min) overflows for large kappa_min * T
    log_la2 = 2 * math.log(L1) - math.log(2 * epsilon) + 2 * T * kappa_min - math.log(C)
    return math.exp(0.5 * log_la2)


def auto_weight(L1: float, epsilon: float, T: float, kappa_min: float) -> float:
    """``4 L1^2 / (2 eps) exp(2 T kappa_min)``, giving ``L_A = 1/2``."""
    return 4.0 * L1 ** 2 / (2 * epsilon) * math.exp(2 * T * kappa_min)


@dataclass(frozen=True)
class PicardConfig:
    """Picard settings; ``None`` selects ``epsilon = kappa_min/4`` and the automatic weight."""

    epsilon: float | None = None
    weight_C: float | None = None
    tol: float = 1e-10
    max_iter: int = 60
    gamma: float = 0.0

    def resolve(self, L1: float, T: float, kappa_min: float) -> "PicardConfig":
        eps = kappa_min / 4 if self.epsilon is None else self.epsilon
        if not 0 < eps < kappa_min / 2:
            raise ValueError(f"epsilon must satisfy 0 < epsilon < kappa_min/2 = {kappa_min / 2}, got {eps}")
        try:
            C = auto_weight(L1, eps, T, kappa_min) if self.weight_C is None else self.weight_C
        except OverflowError:
            raise ValueError("automatic weight exp(2 T kappa_min) overflows; reduce T * kappa_min") from None
        if not C >= 0 or math.isinf(C):
            raise ValueError(f"weight_C must be finite and >= 0, got {C}")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        return replace(self, epsilon=eps, weight_C=C)


@dataclass
class PicardReport:
    residuals: list[float] = field(default_factory=list)
    log_residuals: list[float] = field(default_factory=list)  # shifted, see weight_shift
    log_shift: float = 0.0
    sup_residuals: list[float] = field(default_factory=list)
    wallclock_ms: list[float] = field(default_factory=list)
    L_A: float = math.nan
    weight_C: float = math.nan
    epsilon: float = math.nan
    L1: float = math.nan
    converged: bool = False
    floor: float = 0.0
    log_floor: float = -math.inf

    @property
    def iterations(self) -> int:
        """Map applications after the first; a map that is constant in ``z`` gives 1."""
        return max(len(self.log_residuals) - 1, 0)

    @property
    def ratios(self) -> list[float]:
        r = self.log_residuals
        out = []
        for a, b in zip(r[:-1], r[1:]):
            if a == -math.inf:
                out.append(math.nan)
            else:
                out.append(math.exp(b - a) if b > -math.inf else 0.0)
        return out

    @property
    def bound(self) -> float:
        return min(1.0, self.L_A) + 0.1

    def asymptotic_ratio(self) -> float:
        """Last ratio whose residuals both lie above the rounding floor."""
        r = self.log_residuals
        best = math.nan
        for a, b in zip(r[:-1], r[1:]):
            if a > self.log_floor and b > self.log_floor:
                best = math.exp(b - a)
        return best

    def ratios_above_floor(self) -> list[float]:
        r = self.log_residuals
        return [math.exp(b - a) for a, b in zip(r[:-1], r[1:])
                if a > self.log_floor and b > self.log_floor]

    def rows(self) -> list[tuple]:
        """CSV rows; ratios between residuals at the rounding floor carry no information and are nan."""
        r = self.log_residuals
        ratios = [math.nan] + [q if a > self.log_floor and b > self.log_floor else math.nan
                               for q, a, b in zip(self.ratios, r[:-1], r[1:])]
        return [(m + 1, self.residuals[m], ratios[m], self.wallclock_ms[m], self.sup_residuals[m],
                 math.exp(self.log_residuals[m]) if self.log_residuals[m] > -math.inf else 0.0)
                for m in range(len(self.residuals))]


# scaled_weighted_residual = weighted_residual * exp(C dt / 2): finite even when the weight underflows
PICARD_COLUMNS = ("iter", "weighted_residual", "ratio", "wallclock_ms", "sup_residual",
                  "scaled_weighted_residual")


def write_picard_report(path, report: PicardReport, timing: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(PICARD_COLUMNS)
        for it, res, ratio, ms, sup, scaled in report.rows():
            wr.writerow([it, repr(float(res)), repr(float(ratio)), repr(float(ms if timing else 0.0)),
                         repr(float(sup)), repr(float(scaled))])


def picard_solve(y0, env: Environment, grid: Grid, params: ModelParams, cfg: PicardConfig,
                 T: float, steps: int, z0: Trajectory | None = None,
                 stepper: LinearStepper | None = None):
    """Fixed-point iteration ``z -> solve_frozen(z)`` over whole trajectories.

    Stops when the weighted residual falls below ``tol`` times the first one
    and the plain sup residual below ``tol`` times the sup norm of the
    iterate, or when the residual stagnates at the rounding floor.
    Returns ``(trajectory, report)``; raises :class:`SolverError` carrying
    the report after ``max_iter`` iterations.
    """
    if steps < 1 or T <= 0:
        raise ValueError("need T > 0 and steps >= 1")
    dt = T / steps
    L1 = lipschitz_constants(params, grid).L1
    cfg = cfg.resolve(L1, T, env.kappa_min)
    C = cfg.weight_C
    if L1 == 0:
        L_A = 0.0
    else:
        L_A = contraction_bound(L1, cfg.epsilon, T, env.kappa_min, C) if C > 0 else math.inf
    report = PicardReport(epsilon=cfg.epsilon, weight_C=C, L1=L1, L_A=L_A)
    stepper = stepper or LinearStepper(grid, env, dt, cfg.gamma)
    report.log_shift = 0.5 * C * dt
    y0 = as_pair(y0)
    z = z0 if z0 is not None else Trajectory.constant(y0, steps, dt)
    if z.steps != steps or not math.isclose(z.dt, dt, rel_tol=1e-12):
        raise ValueError("initial iterate has a different time grid")
    vol = grid.volume
    first = None
    for m in range(cfg.max_iter):
        t0 = time.perf_counter()
        znew = solve_frozen(z, env, grid, params, y0, gamma=cfg.gamma, stepper=stepper)
        delta = znew.y - z.y
        d_traj = Trajectory(delta, dt)
        logr = shifted_log_weighted_norm(d_traj, C, grid=grid)
        sup = float(np.max(np.sqrt(np.sum(delta * delta * vol, axis=(1, 2)))))
        zsup = float(np.max(np.sqrt(np.sum(znew.y * znew.y * vol, axis=(1, 2)))))
        report.log_residuals.append(logr)
        report.residuals.append(math.exp(logr - report.log_shift) if logr > -math.inf else 0.0)
        report.sup_residuals.append(sup)
        report.wallclock_ms.append(1e3 * (time.perf_counter() - t0))
        if first is None:
            first = logr
            # rounding floor of a difference: relative eps of the iterate at t > 0
            # (differences vanish identically at t = 0)
            lognorm = shifted_log_weighted_norm(Trajectory(_zero_initial(znew.y), dt), C, grid=grid)
            report.log_floor = lognorm + math.log(100 * EPS) if lognorm > -math.inf else -math.inf
            report.floor = (math.exp(report.log_floor - report.log_shift)
                            if report.log_floor > -math.inf else 0.0)
        z = znew
        weighted_ok = logr == -math.inf or (first > -math.inf and logr <= math.log(cfg.tol) + first)
        sup_ok = sup <= cfg.tol * zsup
        at_floor = sup <= 10 * EPS * zsup
        stagnated = (len(report.sup_residuals) >= 3 and sup <= 1e3 * EPS * zsup
                     and sup >= 0.5 * report.sup_residuals[-2])
        if (weighted_ok and sup_ok) or at_floor or stagnated:
            report.converged = True
            return z, report
    raise SolverError(f"Picard iteration did not converge in {cfg.max_iter} iterations",
                      report.sup_residuals, report)


# ---------------------------------------------------------------- tangent


def tangent_solve(y: Trajectory, param, env: Environment, grid: Grid, params: ModelParams,
                  gamma: float = 0.0, stepper: LinearStepper | None = None,
                  source=None, tol: float = 1e-14, max_iter: int = 200) -> Trajectory:
    """Derivative of the discrete trajectory with respect to ``param``.

    Per step solves the linearization of the implicit-Euler fixed point::

        (M/dt + A) h_{k+1} + M J_d h_{k+1} + Gamma J_b h_{k+1} = M/dt h_k + M f + Gamma g

    by a fixed-point iteration that reuses the factorized step matrix.
    ``param`` is a parameter name or a ``{name: weight}`` direction; h(0) = 0.
    """
    stepper = stepper or LinearStepper(grid, env, y.dt, gamma)
    ops = stepper.ops
    src = source if source is not None else param_source(y, param, grid, env, params)
    h = np.zeros_like(y.y)
    vol = grid.volume
    for k in range(1, y.steps + 1):
        t = y.times[k]
        J = state_jacobian(y.y[k], grid, env, params, t, gamma)
        base = vol * h[k - 1] / y.dt + vol * src.f[k] + ops.boundary_functional(src.g[k])
        x = h[k - 1].copy()
        for it in range(max_iter):
            dd, db = J(x)
            # the monotone derivative is part of J; the stepper itself must stay linear here
            xn = stepper.solve(base - vol * dd - ops.boundary_functional(db))
            change = np.max(np.abs(xn - x))
            x = xn
            if change <= tol * max(np.max(np.abs(x)), 1e-300) or change == 0.0:
                break
        else:
            raise SolverError(f"tangent fixed-point iteration stalled at step {k}")
        h[k] = x
    return Trajectory(h, y.dt)


# ---------------------------------------------------------------- energy estimate


@dataclass(frozen=True)
class EnergyConstants:
    c1: float
    C1: float
    C2: float
    C: float


def energy_constants(L1: float, epsilon: float, T: float, kappa_min: float) -> EnergyConstants:
    """Constants of the a-priori estimate for ``0 < epsilon < kappa_min / 2``."""
    if not 0 < epsilon < kappa_min / 2:
        raise ValueError(f"epsilon must satisfy 0 < epsilon < kappa_min/2 = {kappa_min / 2}")
    c1 = 2 * kappa_min + L1 ** 2 / (2 * epsilon)
    with np.errstate(over="ignore"):
        C1 = float(np.exp(T * c1)) * max(1.0, 1.0 / (2 * epsilon))
    C2 = (C1 * T * c1 + max(1.0 / (2 * epsilon), 1.0)) / (2 * (kappa_min - 2 * epsilon))
    return EnergyConstants(c1, C1, C2, math.sqrt(C1) + math.sqrt(C2))


@dataclass(frozen=True)
class EnergyReport:
    lhs: float
    rhs: float
    C: float
    C1: float
    C2: float
    margin: float
    passed: bool

    def row(self) -> tuple:
        return (self.lhs, self.rhs, self.C, self.C1, self.C2, self.margin, self.passed)


ENERGY_COLUMNS = ("lhs", "rhs", "C", "C1", "C2", "margin", "pass")


def energy_estimate_check(y: Trajectory, f, y0, L1: float, epsilon: float, env: Environment,
                          grid: Grid) -> EnergyReport:
    """Check ``|y|_C(L2) + |y|_L2(H1) <= C (|f|_L2(H1*) + |y0|_L2)``.

    ``f`` is a per-cell density trajectory of shape ``(steps+1, 2, ncells)``
    or ``None``.  Time integrals use the right-endpoint rule of implicit Euler.
    """
    norms = Norms(grid)
    k = energy_constants(L1, epsilon, y.T, env.kappa_min)
    sup_l2 = max(norms.l2(yk) for yk in y.y)
    l2h1 = math.sqrt(sum(y.dt * norms.h1(yk) ** 2 for yk in y.y[1:]))
    lhs = sup_l2 + l2h1
    fdual = 0.0
    if f is not None:
        fdual = math.sqrt(sum(y.dt * norms.dual_h1_density(fk) ** 2 for fk in np.asarray(f)[1:]))
    rhs = k.C * (fdual + norms.l2(as_pair(y0)))
    margin = rhs - lhs
    return EnergyReport(lhs, rhs, k.C, k.C1, k.C2, margin, bool(margin >= 0))


def write_energy_report(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(ENERGY_COLUMNS)
        for r in reports:
            wr.writerow([repr(float(v)) for v in r.row()[:-1]] + [str(r.passed).lower()])
