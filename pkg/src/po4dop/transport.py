"""Finite-volume diffusion and advection, norms and conservation diagnostics.

All operators are assembled in integrated form: ``D @ u`` is the net
diffusive outflow of each cell, so ``w @ D @ u`` is the discrete
``int kappa grad u . grad w``.  The per-cell actions of
:class:`DiscreteOperator` divide by the cell volume, which makes them
symmetric (or skew) under the volume-weighted inner product.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import Environment, as_pair
from .geometry import Grid

SYMMETRIC = "symmetric"
SKEW = "skew-symmetric"


def _face_matrix(grid: Grid, w: np.ndarray) -> sp.csr_matrix:
    """Graph Laplacian ``sum_f w_f (e_a - e_b)(e_a - e_b)^T``."""
    a, b, n = grid.face_a, grid.face_b, grid.ncells
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([w, w, -w, -w])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def diffusion_matrix(grid: Grid, env: Environment) -> sp.csr_matrix:
    return _face_matrix(grid, env.face_kappa(grid) * grid.face_area / grid.face_dist)


def gradient_matrix(grid: Grid) -> sp.csr_matrix:
    """Same stencil as the diffusion matrix with kappa stripped (defines the H1 seminorm)."""
    return _face_matrix(grid, grid.face_area / grid.face_dist)


def advection_matrix(grid: Grid, env: Environment) -> sp.csr_matrix:
    """Skew-symmetric central flux form: ``K[a, b] = F/2``, ``K[b, a] = -F/2``.

    For a divergence-free flux this coincides with both the conservative
    and the advective form, and ``u @ K @ u`` vanishes identically.
    """
    F = np.asarray(env.velocity, dtype=float)
    if F.shape != grid.face_a.shape:
        raise ValueError(f"velocity must hold one flux per interior face ({grid.face_a.size}), "
                         f"got shape {F.shape}")
    a, b, n = grid.face_a, grid.face_b, grid.ncells
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    vals = np.concatenate([0.5 * F, -0.5 * F])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class DiscreteOperator:
    """Per-cell action ``u -> matrix @ u / volume``."""

    matrix: sp.csr_matrix
    volume: np.ndarray
    symmetry: str

    def __call__(self, u) -> np.ndarray:
        return (self.matrix @ np.asarray(u, dtype=float)) / self.volume

    def inner(self, u, w) -> float:
        """Volume-weighted inner product ``<A u, w>``."""
        return float(np.asarray(w) @ (self.matrix @ np.asarray(u, dtype=float)))


def diffusion_operator(grid: Grid, env: Environment) -> DiscreteOperator:
    return DiscreteOperator(diffusion_matrix(grid, env), grid.volume, SYMMETRIC)


def advection_operator(grid: Grid, env: Environment) -> DiscreteOperator:
    return DiscreteOperator(advection_matrix(grid, env), grid.volume, SKEW)


class Operators:
    """Assembled mass, diffusion, gradient and advection matrices for one environment."""

    def __init__(self, grid: Grid, env: Environment):
        self.grid, self.env = grid, env
        self.volume = grid.volume
        self.D = diffusion_matrix(grid, env)
        self.G = gradient_matrix(grid)
        self.K = advection_matrix(grid, env)
        self.A = (self.D + self.K).tocsr()

    @cached_property
    def norms(self) -> "Norms":
        return Norms(self.grid)

    def boundary_functional(self, b) -> np.ndarray:
        """Map facet values ``b`` (pair) to per-cell functional ``sum b * area``."""
        b = np.atleast_2d(np.asarray(b, dtype=float))
        out = np.zeros((b.shape[0], self.grid.ncells))
        for c in range(b.shape[0]):
            out[c] = np.bincount(self.grid.facet_cell, weights=b[c] * self.grid.facet_area,
                                 minlength=self.grid.ncells)
        return out


class Norms:
    """Discrete norms; every method accepts a single field or a pair (summed)."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.G = gradient_matrix(grid)
        self._dual_lu = None

    def _rows(self, u) -> np.ndarray:
        return np.atleast_2d(np.asarray(u, dtype=float))

    def l2_sq(self, u) -> float:
        u = self._rows(u)
        return float(np.sum(u * u * self.grid.volume))

    def grad_sq(self, u) -> float:
        u = self._rows(u)
        return float(sum(r @ (self.G @ r) for r in u))

    def l2(self, u) -> float:
        return float(np.sqrt(self.l2_sq(u)))

    def h1(self, u) -> float:
        return float(np.sqrt(self.l2_sq(u) + self.grad_sq(u)))

    def boundary_l2(self, b) -> float:
        b = self._rows(b)
        return float(np.sqrt(np.sum(b * b * self.grid.facet_area)))

    def dual_h1(self, r) -> float:
        """Dual norm of an integrated functional ``r``: ``sqrt(r . z)``, ``(M + G) z = r``."""
        if self._dual_lu is None:
            A = (sp.diags(self.grid.volume) + self.G).tocsc()
            self._dual_lu = splu(A)
        r = self._rows(r)
        return float(np.sqrt(sum(max(row @ self._dual_lu.solve(row), 0.0) for row in r)))

    def dual_h1_density(self, f) -> float:
        """Dual norm of the functional ``w -> int f w`` for a per-cell density ``f``."""
        return self.dual_h1(self._rows(f) * self.grid.volume)


def apply_B(u, w, env: Environment, grid: Grid, ops: Operators | None = None) -> float:
    """``B(u, w) = sum_j w_j . (D + K) u_j``."""
    ops = ops or Operators(grid, env)
    u, w = as_pair(u), as_pair(w)
    return float(sum(w[j] @ (ops.A @ u[j]) for j in range(2)))


def advection_skew_check(w, env: Environment, grid: Grid) -> float:
    """``<A_adv w, w>`` under the volume-weighted inner product (zero for div-free flow)."""
    K = advection_matrix(grid, env)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return float(sum(r @ (K @ r) for r in w))


def skew_scale(w, env: Environment) -> float:
    """Reference scale ``sum w^2 * max|flux|`` for :func:`advection_skew_check`."""
    w = np.asarray(w, dtype=float)
    return float(np.sum(w * w)) * env.max_flux()


def boundary_term(b, w, grid: Grid) -> float:
    """``sum_facets b . w(adjacent cell) * area`` over both components."""
    b = np.atleast_2d(np.asarray(b, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return float(np.sum(b * w[:, grid.facet_cell] * grid.facet_area))


def total_mass(y, grid: Grid) -> float:
    y = as_pair(y)
    return float(np.sum((y[0] + y[1]) * grid.volume))


@dataclass(frozen=True)
class GardingResult:
    holds: bool
    margin: float
    lhs: float
    rhs: float


def garding_check(u, env: Environment, grid: Grid, ops: Operators | None = None) -> GardingResult:
    """``kappa_min |u|_H1^2 <= B(u, u) + kappa_min |u|_L2^2``."""
    ops = ops or Operators(grid, env)
    u = as_pair(u)
    km = env.kappa_min
    lhs = km * ops.norms.h1(u) ** 2
    rhs = apply_B(u, u, env, grid, ops) + km * ops.norms.l2_sq(u)
    margin = rhs - lhs
    # rounding allowance relative to the magnitudes involved
    tol = 1e-12 * max(abs(lhs), abs(rhs), 1e-300)
    return GardingResult(margin >= -tol, margin, lhs, rhs)


def empirical_C_B(env: Environment, grid: Grid, samples: int = 200, rng=None,
                  ops: Operators | None = None) -> float:
    """Largest sampled ``|B(u, w)| / (|u|_H1 |w|_H1)``; a lower estimate of the true bound."""
    rng = np.random.default_rng(rng)
    ops = ops or Operators(grid, env)
    best = 0.0
    for _ in range(samples):
        u = rng.standard_normal((2, grid.ncells))
        w = rng.standard_normal((2, grid.ncells))
        den = ops.norms.h1(u) * ops.norms.h1(w)
        best = max(best, abs(apply_B(u, w, env, grid, ops)) / den)
    return best


def discrete_C_B(env: Environment, grid: Grid, ops: Operators | None = None) -> float:
    """Exact discrete bound ``max |B(u, w)| / (|u|_H1 |w|_H1)`` by a dense SVD.

    With ``H = M + G = L L^T`` the bound is the spectral norm of
    ``L^-1 (D + K) L^-T``.  Intended for desk-scale grids.
    """
    ops = ops or Operators(grid, env)
    H = np.diag(grid.volume) + ops.G.toarray()
    L = np.linalg.cholesky(H)
    X = np.linalg.solve(L, ops.A.toarray())
    S = np.linalg.solve(L, X.T).T
    return float(np.linalg.norm(S, 2))


DIAGNOSTIC_COLUMNS = ("t", "total_mass", "l2_y", "h1_y", "boundary_exchange")


def diagnostics_rows(traj, grid: Grid, env: Environment, params) -> list[tuple]:
    """One row per time level: ``(t, total_mass, l2_y, h1_y, boundary_exchange)``."""
    from .reaction import reaction_terms

    norms = Norms(grid)
    rows = []
    for k, t in enumerate(traj.times):
        y = traj.y[k]
        r = reaction_terms(y, grid, env, params, t)
        exchange = float(np.sum(r.b1 * grid.facet_area))
        rows.append((float(t), total_mass(y, grid), norms.l2(y), norms.h1(y), exchange))
    return rows


def write_diagnostics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(DIAGNOSTIC_COLUMNS)
        for row in rows:
            wr.writerow([repr(float(v)) for v in row])
