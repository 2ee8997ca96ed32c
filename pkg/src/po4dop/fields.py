"""Tracer states, model parameters and the prescribed environment."""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields as dc_fields, replace
from typing import Iterator

import numpy as np

from .geometry import Grid, GridError

PARAM_NAMES = ("lambda", "alpha", "K_P", "K_I", "K_W", "beta", "nu")
_ATTR = {"lambda": "lam"}


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """The seven biogeochemical parameters.

    ``lam`` is the remineralization rate (``lambda`` in configs and CSVs).
    Construction only rejects values that make the model undefined; the
    strict positivity invariants are enforced by :meth:`validate`.
    """

    lam: float = 0.5
    alpha: float = 2.0
    K_P: float = 0.5
    K_I: float = 30.0
    K_W: float = 0.02
    beta: float = 1.0
    nu: float = 0.5

    def __post_init__(self):
        for f in dc_fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ParameterError(f"parameter {f.name} must be finite")
        if self.K_P <= 0 or self.K_I <= 0:
            raise ParameterError("K_P > 0 and K_I > 0 required")
        if self.lam < 0 or self.alpha < 0 or self.K_W < 0 or self.beta < 0:
            raise ParameterError("lambda, alpha, K_W, beta must be >= 0")
        if not 0 <= self.nu < 1:
            raise ParameterError("0 <= nu < 1 required")

    def validate(self) -> "ModelParams":
        for name in ("lambda", "alpha", "K_P", "K_I", "K_W", "beta"):
            if not self.get(name) > 0:
                raise ParameterError(f"{name} > 0 required, got {self.get(name)}")
        if not 0 < self.nu < 1:
            raise ParameterError(f"0 < nu < 1 required, got {self.nu}")
        return self

    def get(self, name: str) -> float:
        if name not in PARAM_NAMES:
            raise ParameterError(f"unknown parameter {name!r}; expected one of {PARAM_NAMES}")
        return getattr(self, _ATTR.get(name, name))

    def with_value(self, name: str, value: float) -> "ModelParams":
        self.get(name)
        return replace(self, **{_ATTR.get(name, name): float(value)})

    def as_dict(self) -> dict[str, float]:
        return {n: self.get(n) for n in PARAM_NAMES}


@dataclass(frozen=True)
class TracerState:
    """PO4 (``y1``) and DOP (``y2``) at one time slice, one value per wet cell."""

    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        if self.y1.shape != self.y2.shape:
            raise ValueError("y1 and y2 must have the same shape")

    @classmethod
    def from_array(cls, a) -> "TracerState":
        a = np.asarray(a, dtype=float)
        return cls(a[0].copy(), a[1].copy())

    @classmethod
    def constant(cls, grid: Grid, y1: float, y2: float) -> "TracerState":
        return cls(np.full(grid.ncells, float(y1)), np.full(grid.ncells, float(y2)))

    def as_array(self) -> np.ndarray:
        return np.stack([self.y1, self.y2])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.y1)) and np.all(np.isfinite(self.y2)))


def as_pair(y) -> np.ndarray:
    """View a TracerState or a (2, n) array as a float array of shape (2, n)."""
    if isinstance(y, TracerState):
        return y.as_array()
    a = np.asarray(y, dtype=float)
    if a.ndim != 2 or a.shape[0] != 2:
        raise ValueError(f"expected a field pair of shape (2, n), got {a.shape}")
    return a


@dataclass(frozen=True)
class Environment:
    """Prescribed circulation, mixing and light.

    ``velocity`` holds the volume flux through every interior face of the
    grid, oriented from ``grid.face_a`` to ``grid.face_b``.  ``kappa`` is a
    scalar or a per-cell array shared by both tracers.
    """

    velocity: np.ndarray
    kappa: float | np.ndarray
    I0: float = 30.0
    light_shape: str = "constant"
    day_length: float = 1.0 / 365.0

    def __post_init__(self):
        if self.kappa_min <= 0:
            raise ValueError("kappa must be strictly positive")
        if self.light_shape not in ("constant", "diurnal"):
            raise ValueError(f"unknown light shape {self.light_shape!r}")
        if self.I0 < 0:
            raise ValueError("I0 must be >= 0")

    @property
    def kappa_min(self) -> float:
        return float(np.min(self.kappa))

    @property
    def kappa_max(self) -> float:
        return float(np.max(self.kappa))

    def face_kappa(self, grid: Grid) -> np.ndarray:
        k = np.asarray(self.kappa, dtype=float)
        if k.ndim == 0:
            return np.full(grid.face_a.size, float(k))
        ka, kb = k[grid.face_a], k[grid.face_b]
        return 2.0 * ka * kb / (ka + kb)

    def shape(self, t: float) -> float:
        if self.light_shape == "constant":
            return 1.0
        return max(0.0, float(np.cos(2.0 * np.pi * t / self.day_length)))

    def max_flux(self) -> float:
        return float(np.max(np.abs(self.velocity))) if self.velocity.size else 0.0


def insolation_at(env: Environment, column: int, t: float) -> float:
    """Surface irradiance of a column at time ``t`` (uniform over the surface)."""
    return env.I0 * env.shape(t)


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed states ``y[k] = y(k * dt)``, array shape ``(steps + 1, 2, ncells)``."""

    y: np.ndarray
    dt: float

    @property
    def steps(self) -> int:
        return self.y.shape[0] - 1

    @property
    def T(self) -> float:
        return self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def state(self, k: int) -> TracerState:
        return TracerState.from_array(self.y[k])

    def __iter__(self) -> Iterator[TracerState]:
        return (self.state(k) for k in range(self.steps + 1))

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        return Trajectory(self.y - other.y, self.dt)

    @classmethod
    def constant(cls, state, steps: int, dt: float) -> "Trajectory":
        a = as_pair(state)
        return cls(np.repeat(a[None], steps + 1, axis=0), dt)


# --- velocity from stream functions -------------------------------------------

class StreamFunctionError(ValueError):
    pass


def _psi_slices(grid: Grid, psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    shape = (grid.nx + 1, grid.nz_max + 1)
    if psi.shape == shape:
        psi = np.repeat(psi[None], grid.ny, axis=0)
    if psi.shape != (grid.ny,) + shape:
        raise StreamFunctionError(
            f"stream function must have shape {shape} or {(grid.ny,) + shape}, got {psi.shape}")
    return psi


def stream_velocity(grid: Grid, psi) -> np.ndarray:
    """Face volume fluxes from stream functions on (x, z) slices.

    ``psi[j, ci, ck]`` is the stream function of y-row ``j`` at the corner
    ``x = ci * dx``, ``z = ck * dz`` (z downward).  Fluxes are corner
    differences times ``dy``, so every cell's net outflow cancels
    identically.  Flux through y-faces is zero.

    Raises
    ------
    StreamFunctionError
        If psi varies along the boundary of a slice's wet region, which
        would put a nonzero normal flux on a boundary facet.
    """
    psi = _psi_slices(grid, psi)
    dy = grid.dy
    idx = grid.index

    def fx(j, ci, k):  # +x flux through the vertical face at corner column ci, layer k
        return (psi[j, ci, k + 1] - psi[j, ci, k]) * dy

    def fz(j, i, ck):  # downward flux through the horizontal face at corner row ck, column i
        return -(psi[j, i + 1, ck] - psi[j, i, ck]) * dy

    flux = np.zeros(grid.face_a.size)
    a, b = grid.face_a, grid.face_b
    ax = grid.face_axis
    m = ax == 0
    flux[m] = fx(grid.cell_j[a[m]], grid.cell_i[b[m]], grid.cell_k[a[m]])
    m = ax == 2
    flux[m] = fz(grid.cell_j[a[m]], grid.cell_i[a[m]], grid.cell_k[b[m]])

    # boundary faces of every wet cell must carry no flux
    i, j, k = grid.cell_i, grid.cell_j, grid.cell_k
    nzl = grid.col_nlayers[grid.cell_col]

    def wet(ii, kk):
        ok = (ii >= 0) & (ii < grid.nx) & (kk >= 0) & (kk < grid.nz_max)
        out = np.zeros(ii.shape, dtype=bool)
        out[ok] = idx[ii[ok], j[ok], kk[ok]] >= 0
        return out

    bnd = []
    east = ~wet(i + 1, k)
    bnd.append(fx(j[east], i[east] + 1, k[east]))
    west = ~wet(i - 1, k)
    bnd.append(fx(j[west], i[west], k[west]))
    top = k == 0
    bnd.append(fz(j[top], i[top], k[top]))
    bottom = k == nzl - 1
    bnd.append(fz(j[bottom], i[bottom], k[bottom] + 1))
    bnd = np.concatenate(bnd)
    scale = max(np.max(np.abs(psi)) * dy, np.finfo(float).tiny)
    if bnd.size and np.max(np.abs(bnd)) > 1e-12 * scale:
        raise StreamFunctionError(
            "stream function is not constant along the boundary of the wet region "
            f"(max boundary flux {np.max(np.abs(bnd)):.3e})")
    return flux


def interior_corner_mask(grid: Grid) -> np.ndarray:
    """Corners ``(ny, nx + 1, nz_max + 1)`` whose four adjacent cells of the slice are all wet.

    A stream function that vanishes off this mask is constant (zero) along
    the boundary of every slice's wet region, hence carries no boundary flux.
    """
    nx, nz = grid.nx, grid.nz_max
    mask = np.zeros((grid.ny, nx + 1, nz + 1), dtype=bool)
    for j in range(grid.ny):
        pad = np.zeros((nx + 2, nz + 2), dtype=bool)
        pad[1:-1, 1:-1] = grid.index[:, j, :] >= 0
        mask[j] = pad[:-1, :-1] & pad[1:, :-1] & pad[:-1, 1:] & pad[1:, 1:]
    return mask


def default_stream_function(grid: Grid, amplitude: float) -> np.ndarray:
    """Single overturning cell per slice, zero on the slice's wet-region boundary."""
    nx, nz = grid.nx, grid.nz_max
    psi = np.zeros((grid.ny, nx + 1, nz + 1))
    x = np.arange(nx + 1) * grid.dx
    z = np.arange(nz + 1) * grid.dz
    Lx = nx * grid.dx
    for j in range(grid.ny):
        wet = grid.index[:, j, :] >= 0
        if not wet.any():
            continue
        H = grid.dz * wet.sum(axis=1).max()
        psi[j] = amplitude * np.outer(np.sin(np.pi * x / Lx), np.sin(np.pi * np.minimum(z, H) / H))
    return np.where(interior_corner_mask(grid), psi, 0.0)


def random_stream_function(grid: Grid, rng, amplitude: float = 1.0) -> np.ndarray:
    """Random corner values on the interior mask (no boundary flux by construction)."""
    psi = amplitude * rng.standard_normal((grid.ny, grid.nx + 1, grid.nz_max + 1))
    return np.where(interior_corner_mask(grid), psi, 0.0)


def cell_divergence(grid: Grid, flux: np.ndarray) -> np.ndarray:
    """Net outflow of every cell."""
    div = np.zeros(grid.ncells)
    np.add.at(div, grid.face_a, flux)
    np.add.at(div, grid.face_b, -flux)
    return div


def read_stream_function(path, grid: Grid) -> np.ndarray:
    """Read stream-function slices: blank-line separated blocks of
    ``nz_max + 1`` rows with ``nx + 1`` corner values each (one block is
    replicated to all y-rows)."""
    blocks, cur = [], []
    with open(path) as fh:
        for ln in fh:
            if ln.lstrip().startswith("#"):
                continue
            if not ln.strip():
                if cur:
                    blocks.append(cur)
                    cur = []
                continue
            try:
                cur.append([float(v) for v in ln.split()])
            except ValueError as exc:
                raise StreamFunctionError(f"{path}: {exc}") from None
    if cur:
        blocks.append(cur)
    try:
        arr = np.array([np.array(b).T for b in blocks])  # (nblocks, nx+1, nz+1)
    except ValueError:
        raise StreamFunctionError(f"{path}: rows of unequal length") from None
    if arr.shape[0] == 1:
        arr = arr[0]
    return _psi_slices(grid, arr)


def light_profile(grid: Grid, env: Environment, params: ModelParams, t: float) -> np.ndarray:
    """Light limitation at every cell center (values on aphotic cells are not used)."""
    from .reaction import saturation

    x = env.I0 * env.shape(t) * np.exp(-grid.z_center * params.K_W)
    return saturation(x, params.K_I)


def light_factor(env: Environment, params: ModelParams, grid: Grid, cell: int, t: float) -> float:
    """Michaelis-Menten light limitation at the center of a euphotic cell."""
    if not 0 <= cell < grid.ncells:
        raise GridError(f"cell {cell} is not a wet cell")
    if not grid.euphotic[cell]:
        raise GridError(f"cell {cell} is aphotic; uptake is undefined there")
    from .reaction import saturation

    x = insolation_at(env, int(grid.cell_col[cell]), t) * np.exp(-grid.z_center[cell] * params.K_W)
    return float(saturation(x, params.K_I))


# --- snapshot I/O ---------------------------------------------------------------

def write_snapshot(path, grid: Grid, state) -> None:
    a = as_pair(state)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_i", "cell_j", "cell_k", "y1", "y2"])
        for c in range(grid.ncells):
            w.writerow([int(grid.cell_i[c]), int(grid.cell_j[c]), int(grid.cell_k[c]),
                        repr(float(a[0, c])), repr(float(a[1, c]))])


def read_snapshot(path, grid: Grid) -> TracerState:
    y = np.full((2, grid.ncells), np.nan)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            c = grid.index[int(row["cell_i"]), int(row["cell_j"]), int(row["cell_k"])]
            if c < 0:
                raise GridError(f"{path}: snapshot row refers to a dry cell")
            y[0, c] = float(row["y1"])
            y[1, c] = float(row["y2"])
    if np.isnan(y).any():
        raise GridError(f"{path}: snapshot does not cover every wet cell")
    return TracerState.from_array(y)
