"""Cosine-mode Galerkin approximation on a flat box.

The ansatz ``y_j = sum_m u_jm phi_m`` uses the Neumann eigenfunctions
``phi = N cos(p pi x / Lx) cos(q pi y / Ly) cos(r pi z / H)``.  Mode indices
per axis are capped by the number of cells along that axis, so the
midpoint-rule quadrature on the finite-volume grid is exactly orthonormal
(the DCT-II orthogonality relation) and projection is a plain weighted sum.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .fields import Environment, ModelParams, Trajectory, as_pair
from .geometry import BOTTOM_APHOTIC, BOTTOM_EUPHOTIC, Grid, GridError
from .reaction import reaction_terms
from .transport import advection_matrix, diffusion_matrix


class GalerkinError(RuntimeError):
    pass


def _axis_values(n: int, L: float, p: int, at) -> np.ndarray:
    return np.cos(p * np.pi * np.asarray(at) / L)


@dataclass
class GalerkinSystem:
    """Mode set, basis values and the linear operator ``A`` of the coefficient ODE.

    ``basis[c, m]`` is mode ``m`` at cell centre ``c``; ``trace[f, m]`` its
    value on boundary facet ``f``.  ``A`` couples the modes through
    diffusion and advection; ``r`` is a constant forcing (zero by default).
    """

    grid: Grid
    modes: list[tuple[int, int, int]]
    basis: np.ndarray
    trace: np.ndarray
    A: np.ndarray
    eigenvalues: np.ndarray
    r: np.ndarray

    @property
    def size(self) -> int:
        return len(self.modes)

    def project(self, y) -> np.ndarray:
        """Coefficients ``(2, nmodes)`` of a per-cell pair."""
        return as_pair(y) @ (self.grid.volume[:, None] * self.basis)

    def reconstruct(self, u) -> np.ndarray:
        return np.asarray(u) @ self.basis.T

    def Phi(self, t: float, u: np.ndarray, env: Environment, params: ModelParams) -> np.ndarray:
        """Projected coupling: ``int d phi + int_Gamma b phi`` with ``d, b`` at the reconstructed state."""
        y = self.reconstruct(u)
        rt = reaction_terms(y, self.grid, env, params, t)
        return (rt.d * self.grid.volume) @ self.basis + (rt.b * self.grid.facet_area) @ self.trace


def _mode_index_set(grid: Grid, modes: int) -> list[tuple[int, int, int]]:
    if modes < 1:
        raise ValueError("need at least one mode per axis")
    nz = grid.nz_max
    rng = [range(min(modes, grid.nx)), range(min(modes, grid.ny)), range(min(modes, nz))]
    return sorted(itertools.product(*rng), key=lambda m: (sum(m), m))


def build_galerkin(grid: Grid, env: Environment, modes: int) -> GalerkinSystem:
    """Assemble the Galerkin system; ``modes`` is the number of modes per axis."""
    if not grid.is_flat or grid.ncols != grid.nx * grid.ny:
        raise GridError("the cosine basis requires a flat box (uniform depth, all columns wet)")
    Lx, Ly, H = grid.nx * grid.dx, grid.ny * grid.dy, grid.h_max
    idx = _mode_index_set(grid, modes)
    xc = (grid.cell_i + 0.5) * grid.dx
    yc = (grid.cell_j + 0.5) * grid.dy
    zc = grid.z_center
    fc = grid.facet_cell
    fz = np.where(np.isin(grid.facet_kind, (BOTTOM_EUPHOTIC, BOTTOM_APHOTIC)), grid.facet_depth, 0.0)
    basis = np.empty((grid.ncells, len(idx)))
    trace = np.empty((grid.nfacets, len(idx)))
    eig = np.empty(len(idx))
    for m, (p, q, r) in enumerate(idx):
        norm = np.sqrt((1 if p == 0 else 2) * (1 if q == 0 else 2) * (1 if r == 0 else 2) / (Lx * Ly * H))
        bx, by = _axis_values(grid.nx, Lx, p, xc), _axis_values(grid.ny, Ly, q, yc)
        basis[:, m] = norm * bx * by * _axis_values(grid.nz_max, H, r, zc)
        # boundary trace at the facet itself (z = 0 or z = H), not at the cell centre
        trace[:, m] = norm * bx[fc] * by[fc] * _axis_values(grid.nz_max, H, r, fz)
        eig[m] = np.pi ** 2 * (p ** 2 / Lx ** 2 + q ** 2 / Ly ** 2 + r ** 2 / H ** 2)
    kappa = np.asarray(env.kappa, dtype=float)
    if kappa.ndim == 0:
        A = np.diag(float(kappa) * eig)
    else:
        A = basis.T @ (diffusion_matrix(grid, env) @ basis)
    if env.max_flux() > 0:
        A = A + basis.T @ (advection_matrix(grid, env) @ basis)
    return GalerkinSystem(grid, idx, basis, trace, A, eig, np.zeros((2, len(idx))))


@dataclass(frozen=True)
class GalerkinTrajectory:
    system: GalerkinSystem
    u: np.ndarray  # (steps + 1, 2, nmodes)
    dt: float

    @property
    def steps(self) -> int:
        return self.u.shape[0] - 1

    def grid_trajectory(self) -> Trajectory:
        return Trajectory(np.stack([self.system.reconstruct(uk) for uk in self.u]), self.dt)


def galerkin_solve(modes: int, env: Environment, grid: Grid, params: ModelParams, y0,
                   T: float, steps: int, tol: float = 1e-13, max_iter: int = 200,
                   system: GalerkinSystem | None = None) -> GalerkinTrajectory:
    """Implicit Euler for ``u' + A u + Phi(t, u) = r`` in the mode coefficients.

    Each step is solved by fixed-point iteration on ``Phi`` with the linear
    part inverted exactly.
    """
    if steps < 1 or T <= 0:
        raise ValueError("need T > 0 and steps >= 1")
    sys_ = system or build_galerkin(grid, env, modes)
    dt = T / steps
    n = sys_.size
    lhs = np.eye(n) / dt + sys_.A
    inv = np.linalg.inv(lhs)
    u = np.empty((steps + 1, 2, n))
    u[0] = sys_.project(y0)
    coupled = params.alpha != 0 or params.lam != 0
    for k in range(1, steps + 1):
        t = k * dt
        base = u[k - 1] / dt + sys_.r
        x = (base @ inv.T)
        if coupled:
            for _ in range(max_iter):
                xn = (base - sys_.Phi(t, x, env, params)) @ inv.T
                change = np.max(np.abs(xn - x))
                x = xn
                if change <= tol * max(np.max(np.abs(x)), 1e-300):
                    break
            else:
                raise GalerkinError(f"fixed-point iteration stalled at step {k}")
        u[k] = x
    return GalerkinTrajectory(sys_, u, dt)


def heat_decay_factor(kappa: float, mu: float, dt: float, m: int) -> float:
    """Closed-form implicit-Euler amplitude ``(1 + kappa mu dt)^-m``."""
    return (1.0 + kappa * mu * dt) ** (-m)


COEFFICIENT_COLUMNS = ("step", "t", "component", "p", "q", "r", "coefficient")


def coefficient_rows(traj: GalerkinTrajectory) -> list[tuple]:
    rows = []
    for k in range(traj.steps + 1):
        for c in range(2):
            for m, (p, q, r) in enumerate(traj.system.modes):
                rows.append((k, k * traj.dt, c + 1, p, q, r, float(traj.u[k, c, m])))
    return rows
