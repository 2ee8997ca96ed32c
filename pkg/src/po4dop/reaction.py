"""Biogeochemical coupling terms of the PO4-DOP model.

Interior coupling ``d = (d1, d2)``::

    euphotic:  d1 = -lam*y2 + G       d2 = lam*y2 - nu*G
    aphotic:   d1 = -lam*y2 + Fbar    d2 = lam*y2

with uptake ``G = alpha * f_KP(y1) * f_KI(I exp(-z K_W))``, column export
``E = (1 - nu) * int_0^he G dz`` and sinking redistribution
``Fbar = -E (beta/he_bar) (z/he_bar)^(-beta-1)``.  The boundary coupling is
``b1 = -E`` on euphotic bottom facets, ``-E (h/he_bar)^-beta`` on aphotic
bottom facets, 0 at the surface, and ``b2 = 0``.

All per-cell outputs are full-length arrays over the wet cells; uptake is
zero on aphotic cells.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Environment, ModelParams, TracerState, as_pair, light_profile
from .geometry import BOTTOM_APHOTIC, BOTTOM_EUPHOTIC, Grid


def _check_K(K):
    if np.any(np.asarray(K) <= 0):
        raise ValueError(f"half-saturation constant must be > 0, got {K}")


def saturation(x, K):
    """Saturation function ``x / (|x| + K)``; bounded by 1, Lipschitz with 1/K."""
    _check_K(K)
    x = np.asarray(x, dtype=float)
    out = x / (np.abs(x) + K)
    return out if out.ndim else float(out)


def saturation_derivative(x, K):
    """``K / (|x| + K)**2``, the derivative of :func:`saturation` (also at 0)."""
    _check_K(K)
    x = np.asarray(x, dtype=float)
    out = K / (np.abs(x) + K) ** 2
    return out if out.ndim else float(out)


def sinking_layer_mass(params: ModelParams, z_top, z_bot, he_bar: float):
    """Exact integral of ``(beta/he_bar) (z/he_bar)^(-beta-1)`` over ``[z_top, z_bot]``."""
    z_top = np.asarray(z_top, dtype=float)
    z_bot = np.asarray(z_bot, dtype=float)
    if np.any(z_top < he_bar * (1 - 1e-12)):
        raise ValueError("sinking layers must lie below the maximal euphotic depth")
    b = params.beta
    out = (z_top / he_bar) ** (-b) - (z_bot / he_bar) ** (-b)
    return out if out.ndim else float(out)


def aphotic_layer_mass(grid: Grid, params: ModelParams) -> np.ndarray:
    """Per-cell sinking fractions (zero on euphotic cells)."""
    m = np.zeros(grid.ncells)
    aph = ~grid.euphotic
    m[aph] = sinking_layer_mass(params, grid.z_top[aph], grid.z_bot[aph], grid.he_bar)
    return m


def bottom_factor(grid: Grid, params: ModelParams) -> np.ndarray:
    """Per-facet factor multiplying ``-E`` in ``b1`` (1, power law, or 0 at the surface)."""
    f = np.zeros(grid.nfacets)
    f[grid.facet_kind == BOTTOM_EUPHOTIC] = 1.0
    m = grid.facet_kind == BOTTOM_APHOTIC
    f[m] = (grid.facet_depth[m] / grid.he_bar) ** (-params.beta)
    return f


def uptake_G(y1, grid: Grid, env: Environment, params: ModelParams, t: float) -> np.ndarray:
    light = light_profile(grid, env, params, t)
    return np.where(grid.euphotic, params.alpha * saturation(y1, params.K_P) * light, 0.0)


def column_integral(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Midpoint-rule depth integral of a per-cell field over each column."""
    return grid.column_sum(values * grid.dz)


def export_E(y1, grid: Grid, env: Environment, params: ModelParams, t: float, column=None):
    """Column export ``(1 - nu) * sum_euphotic G dz``; all columns when ``column`` is None."""
    E = (1.0 - params.nu) * column_integral(grid, uptake_G(y1, grid, env, params, t))
    return E if column is None else float(E[column])


@dataclass(frozen=True)
class ReactionOutput:
    d1: np.ndarray
    d2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    E: np.ndarray

    @property
    def d(self) -> np.ndarray:
        return np.stack([self.d1, self.d2])

    @property
    def b(self) -> np.ndarray:
        return np.stack([self.b1, self.b2])


def assemble(grid: Grid, params: ModelParams, G: np.ndarray, y2: np.ndarray,
             lam: float | None = None, layer_mass=None, bfactor=None) -> ReactionOutput:
    """Build ``d`` and ``b`` from an uptake-like field ``G`` and a DOP-like field ``y2``.

    Shared by the forward terms and every linearization: the coupling is
    linear in ``(G, y2)``.
    """
    lam = params.lam if lam is None else lam
    if layer_mass is None:
        layer_mass = aphotic_layer_mass(grid, params)
    if bfactor is None:
        bfactor = bottom_factor(grid, params)
    nu = params.nu
    E = (1.0 - nu) * column_integral(grid, G)
    fbar = -E[grid.cell_col] * layer_mass / grid.dz
    remin = lam * y2
    d1 = -remin + G + fbar
    d2 = remin - nu * G
    b1 = -E[grid.facet_col] * bfactor
    return ReactionOutput(d1, d2, b1, np.zeros(grid.nfacets), E)


def reaction_terms(y, grid: Grid, env: Environment, params: ModelParams, t: float) -> ReactionOutput:
    y = as_pair(y)
    G = uptake_G(y[0], grid, env, params, t)
    return assemble(grid, params, G, y[1])


def reaction_d(y, grid: Grid, env: Environment, params: ModelParams, t: float):
    r = reaction_terms(y, grid, env, params, t)
    return r.d1, r.d2


def boundary_b(y, grid: Grid, env: Environment, params: ModelParams, t: float):
    r = reaction_terms(y, grid, env, params, t)
    return r.b1, r.b2


def column_mass_balance(y, grid: Grid, env: Environment, params: ModelParams, t: float,
                        column=None):
    """Column budget ``sum (d1 + d2) vol + sum b1 area``; zero for a closed system."""
    r = reaction_terms(y, grid, env, params, t)
    interior = grid.column_sum((r.d1 + r.d2) * grid.volume)
    boundary = np.bincount(grid.facet_col, weights=r.b1 * grid.facet_area, minlength=grid.ncols)
    res = interior + boundary
    return res if column is None else float(res[column])


@dataclass(frozen=True)
class LipschitzConstants:
    L_d: float
    L_b: float
    L1: float
    c_tau: float


def lipschitz_constants(params: ModelParams, grid: Grid) -> LipschitzConstants:
    lam, a, KP, b, nu = params.lam, params.alpha, params.K_P, params.beta, params.nu
    he = grid.he_bar
    # clamp: grids shallower than he_bar have no aphotic zone
    deep = max(grid.h_max / he - 1.0, 0.0)
    c1 = max(lam ** 2, a ** 2 / KP ** 2 * (1.0 + deep * b ** 2 * (1.0 - nu) ** 2))
    c2 = max(lam ** 2, a ** 2 * nu ** 2 / KP ** 2)
    L_d = float(np.sqrt(2.0 * (c1 + c2)))
    L_b = float(a * (1.0 - nu) * np.sqrt(he) / KP)
    c_tau = grid.trace_constant()
    return LipschitzConstants(L_d, L_b, L_d + c_tau * L_b, c_tau)


def monotone_term(y, gamma: float) -> np.ndarray:
    """Componentwise ``gamma * y / (1 + |y|)``: monotone, bounded by ``gamma |y|``."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    y = y.as_array() if isinstance(y, TracerState) else np.asarray(y, dtype=float)
    return gamma * y / (1.0 + np.abs(y))


def monotone_derivative(y, gamma: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return gamma / (1.0 + np.abs(y)) ** 2
