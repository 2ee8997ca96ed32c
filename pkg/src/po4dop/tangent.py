"""Derivatives of the coupling terms with respect to state and parameters.

State derivatives follow the structure of the forward terms: export and
sinking keep their form with the uptake replaced by its linearization
``alpha * K_P h1 / (|y1| + K_P)**2 * light``, so :func:`reaction.assemble`
is reused for every tangent.  Parameter derivatives are hand-derived below;
each one is guarded by a central-difference test.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .fields import (PARAM_NAMES, Environment, ModelParams, Trajectory, TracerState, as_pair,
                     light_profile)
from .geometry import BOTTOM_APHOTIC, Grid
from .reaction import (aphotic_layer_mass, assemble, bottom_factor, column_integral,
                       monotone_derivative, saturation, saturation_derivative)


def dG(y1, h1, grid: Grid, env: Environment, params: ModelParams, t: float) -> np.ndarray:
    light = light_profile(grid, env, params, t)
    w = params.alpha * saturation_derivative(y1, params.K_P) * light
    return np.where(grid.euphotic, w * h1, 0.0)


def dE(y1, h1, grid: Grid, env: Environment, params: ModelParams, t: float, column=None):
    out = (1.0 - params.nu) * column_integral(grid, dG(y1, h1, grid, env, params, t))
    return out if column is None else float(out[column])


class StateJacobianAction:
    """Matrix-free action ``h -> (d_y d(y) h, d_y b(y) h)`` at a fixed state ``y``.

    ``gamma > 0`` adds the derivative of the monotone term to the interior part.
    """

    def __init__(self, y, grid: Grid, env: Environment, params: ModelParams, t: float,
                 gamma: float = 0.0):
        self.base = TracerState.from_array(as_pair(y))
        self.grid, self.params, self.gamma = grid, params, gamma
        light = light_profile(grid, env, params, t)
        self._w = np.where(grid.euphotic,
                           params.alpha * saturation_derivative(self.base.y1, params.K_P) * light, 0.0)
        self._mass = aphotic_layer_mass(grid, params)
        self._bf = bottom_factor(grid, params)
        self._mono = monotone_derivative(self.base.as_array(), gamma) if gamma > 0 else None

    def __call__(self, h):
        """Return ``(dd, db)`` with shapes ``(2, ncells)`` and ``(2, nfacets)``."""
        h = as_pair(h)
        r = assemble(self.grid, self.params, self._w * h[0], h[1],
                     layer_mass=self._mass, bfactor=self._bf)
        dd = r.d
        if self._mono is not None:
            dd = dd + self._mono * h
        return dd, r.b


def state_jacobian(y, grid: Grid, env: Environment, params: ModelParams, t: float,
                   gamma: float = 0.0) -> StateJacobianAction:
    return StateJacobianAction(y, grid, env, params, t, gamma)


def param_derivative(y, name: str, grid: Grid, env: Environment, params: ModelParams, t: float):
    """Partial derivatives ``(d_p d, d_p b)`` of the coupling terms at state ``y``."""
    if name not in PARAM_NAMES:
        raise ValueError(f"unknown parameter {name!r}; expected one of {PARAM_NAMES}")
    y = as_pair(y)
    y1, y2 = y
    n, nf = grid.ncells, grid.nfacets
    if name == "lambda":
        return np.stack([-y2, y2]), np.zeros((2, nf))

    a, KP, KI, KW = params.alpha, params.K_P, params.K_I, params.K_W
    x = env.I0 * env.shape(t) * np.exp(-grid.z_center * KW)
    light = saturation(x, KI)
    sat = saturation(y1, KP)
    eu = grid.euphotic
    zero2 = np.zeros(n)

    if name in ("alpha", "K_P", "K_I", "K_W"):
        if name == "alpha":
            g = sat * light
        elif name == "K_P":
            # d/dK [y/(|y|+K)] = -y/(|y|+K)^2
            g = -a * light * y1 / (np.abs(y1) + KP) ** 2
        elif name == "K_I":
            g = -a * sat * x / (np.abs(x) + KI) ** 2
        else:
            # d/dK_W f_KI(I e^{-z K_W}) = f_KI'(x) * (-z x)
            g = a * sat * saturation_derivative(x, KI) * (-grid.z_center * x)
        r = assemble(grid, params, np.where(eu, g, 0.0), zero2, lam=0.0)
        return r.d, r.b

    G = np.where(eu, a * sat * light, 0.0)
    S = column_integral(grid, G)  # export before the (1 - nu) factor
    mass = aphotic_layer_mass(grid, params)
    bf = bottom_factor(grid, params)
    if name == "nu":
        # E = (1-nu) S -> dE = -S; Fbar = -E m/dz; b1 = -E * factor
        dd1 = S[grid.cell_col] * mass / grid.dz
        dd2 = -G
        db1 = S[grid.facet_col] * bf
        return np.stack([dd1, dd2]), np.stack([db1, np.zeros(nf)])

    # beta: d/db a^-b = -ln(a) a^-b
    E = (1.0 - params.nu) * S
    he = grid.he_bar
    dmass = np.zeros(n)
    aph = ~eu
    at = grid.z_top[aph] / he
    ab = grid.z_bot[aph] / he
    b = params.beta
    dmass[aph] = -np.log(at) * at ** (-b) + np.log(ab) * ab ** (-b)
    dbf = np.zeros(nf)
    m = grid.facet_kind == BOTTOM_APHOTIC
    ah = grid.facet_depth[m] / he
    dbf[m] = -np.log(ah) * ah ** (-b)
    dd1 = -E[grid.cell_col] * dmass / grid.dz
    db1 = -E[grid.facet_col] * dbf
    return np.stack([dd1, np.zeros(n)]), np.stack([db1, np.zeros(nf)])


@dataclass(frozen=True)
class ParamSensitivitySource:
    """Inhomogeneities of the linearized problem along a trajectory.

    ``f`` has shape ``(steps + 1, 2, ncells)``, ``g`` shape ``(steps + 1, 2, nfacets)``.
    """

    param: str | Mapping[str, float]
    f: np.ndarray
    g: np.ndarray


def _direction(param) -> dict[str, float]:
    if isinstance(param, str):
        if param not in PARAM_NAMES:
            raise ValueError(f"unknown parameter {param!r}; expected one of {PARAM_NAMES}")
        return {param: 1.0}
    out = {}
    for k, v in dict(param).items():
        if k not in PARAM_NAMES:
            raise ValueError(f"unknown parameter {k!r}; expected one of {PARAM_NAMES}")
        out[k] = float(v)
    return out


def param_source(traj: Trajectory, param, grid: Grid, env: Environment,
                 params: ModelParams) -> ParamSensitivitySource:
    """``f = -d_p d(y)``, ``g = -d_p b(y)`` at every time level of ``traj``.

    ``param`` is a parameter name or a mapping ``{name: weight}`` giving a
    direction in parameter space.
    """
    direction = _direction(param)
    f = np.zeros((traj.steps + 1, 2, grid.ncells))
    g = np.zeros((traj.steps + 1, 2, grid.nfacets))
    for k, t in enumerate(traj.times):
        for name, w in direction.items():
            dd, db = param_derivative(traj.y[k], name, grid, env, params, t)
            f[k] -= w * dd
            g[k] -= w * db
    return ParamSensitivitySource(param, f, g)
