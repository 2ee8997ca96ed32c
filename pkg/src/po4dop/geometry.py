"""Column-structured water-body grid.

The domain is a staircase approximation of a basin: a rectangular surface
grid of ``nx * ny`` columns, each extending from the surface down to its own
depth in layers of uniform thickness ``dz``.  Cells are cell-centered and
stored column by column, top layer first.

Zones
-----
Each wet cell is either euphotic (center above the local euphotic depth
``min(he_bar, depth)``) or aphotic.  Each column has one surface facet and
one bottom facet; the bottom facet lies on the aphotic bottom iff the column
is deeper than ``he_bar``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EUPHOTIC = "euphotic"
APHOTIC = "aphotic"

# boundary facet kinds
SURFACE = 0
BOTTOM_EUPHOTIC = 1
BOTTOM_APHOTIC = 2

_MULTIPLE_TOL = 1e-9


class GridError(ValueError):
    """Invalid grid configuration."""


@dataclass(frozen=True)
class GridConfig:
    nx: int
    ny: int
    dx: float
    dy: float
    dz: float
    he_bar: float
    depth: np.ndarray  # shape (nx, ny), 0 marks a dry column


@dataclass(eq=False)
class Grid:
    """Discrete domain with all measures needed for quadrature.

    Attributes are plain numpy arrays indexed by cell, column, face or
    boundary facet.  Instances are treated as immutable.
    """

    nx: int
    ny: int
    dx: float
    dy: float
    dz: float
    he_bar: float
    depth: np.ndarray

    # columns (wet only)
    col_i: np.ndarray = field(repr=False)
    col_j: np.ndarray = field(repr=False)
    col_depth: np.ndarray = field(repr=False)
    col_nlayers: np.ndarray = field(repr=False)
    col_neuphotic: np.ndarray = field(repr=False)
    col_start: np.ndarray = field(repr=False)

    # cells
    cell_col: np.ndarray = field(repr=False)
    cell_i: np.ndarray = field(repr=False)
    cell_j: np.ndarray = field(repr=False)
    cell_k: np.ndarray = field(repr=False)
    z_center: np.ndarray = field(repr=False)
    z_top: np.ndarray = field(repr=False)
    z_bot: np.ndarray = field(repr=False)
    volume: np.ndarray = field(repr=False)
    euphotic: np.ndarray = field(repr=False)

    # interior faces, oriented from face_a to face_b
    face_a: np.ndarray = field(repr=False)
    face_b: np.ndarray = field(repr=False)
    face_area: np.ndarray = field(repr=False)
    face_dist: np.ndarray = field(repr=False)
    face_axis: np.ndarray = field(repr=False)

    # boundary facets (surface + bottom); lateral walls carry no facet
    facet_cell: np.ndarray = field(repr=False)
    facet_col: np.ndarray = field(repr=False)
    facet_area: np.ndarray = field(repr=False)
    facet_kind: np.ndarray = field(repr=False)
    facet_depth: np.ndarray = field(repr=False)

    index: np.ndarray = field(repr=False)  # (nx, ny, nz_max) -> cell or -1

    @property
    def ncells(self) -> int:
        return self.cell_col.size

    @property
    def ncols(self) -> int:
        return self.col_i.size

    @property
    def nfacets(self) -> int:
        return self.facet_cell.size

    @property
    def nz_max(self) -> int:
        return self.index.shape[2]

    @property
    def h_max(self) -> float:
        return float(self.col_depth.max())

    @property
    def column_area(self) -> float:
        return self.dx * self.dy

    @property
    def is_flat(self) -> bool:
        return self.ncols == self.nx * self.ny and np.all(self.col_depth == self.col_depth[0])

    @property
    def bottom_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_kind != SURFACE)

    @property
    def surface_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_kind == SURFACE)

    def column_of(self, i: int, j: int) -> int:
        hit = np.flatnonzero((self.col_i == i) & (self.col_j == j))
        if hit.size == 0:
            raise GridError(f"column ({i}, {j}) is dry or outside the grid")
        return int(hit[0])

    def column_cells(self, column: int) -> np.ndarray:
        s = self.col_start[column]
        return np.arange(s, s + self.col_nlayers[column])

    def column_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum a per-cell array over each column (fixed summation order)."""
        return np.bincount(self.cell_col, weights=values, minlength=self.ncols)

    def trace_constant(self) -> float:
        """Discrete trace constant: sqrt of the max facet-area / cell-volume ratio."""
        return float(np.sqrt(np.max(self.facet_area / self.volume[self.facet_cell])))


def _check_multiple(value: float, dz: float) -> bool:
    q = value / dz
    return abs(q - round(q)) <= _MULTIPLE_TOL * max(1.0, abs(q))


def build_grid(config: GridConfig) -> Grid:
    """Build the discrete domain from a grid configuration.

    Raises
    ------
    GridError
        If a depth or ``he_bar`` is not a multiple of ``dz``, or if every
        column is dry.
    """
    nx, ny = int(config.nx), int(config.ny)
    dx, dy, dz, he_bar = (float(config.dx), float(config.dy), float(config.dz),
                          float(config.he_bar))
    if nx < 1 or ny < 1:
        raise GridError("nx and ny must be >= 1")
    if dz <= 0 or dx <= 0 or dy <= 0:
        raise GridError("dx, dy, dz must be positive")
    if he_bar <= 0 or not _check_multiple(he_bar, dz):
        raise GridError(f"he_bar={he_bar} must be a positive multiple of dz={dz}")
    depth = np.asarray(config.depth, dtype=float)
    if depth.shape != (nx, ny):
        raise GridError(f"depth array has shape {depth.shape}, expected {(nx, ny)}")
    for (i, j), h in np.ndenumerate(depth):
        if h < 0 or not np.isfinite(h):
            raise GridError(f"column ({i}, {j}): depth {h} must be >= 0")
        if h > 0 and not _check_multiple(h, dz):
            raise GridError(f"column ({i}, {j}): depth {h} is not a multiple of dz={dz}")
    wet = np.argwhere(depth > 0)
    if wet.size == 0:
        raise GridError("no wet columns")
    # column-major over (i, j) in lexicographic order
    col_i, col_j = wet[:, 0], wet[:, 1]
    col_depth = depth[col_i, col_j]
    col_n = np.rint(col_depth / dz).astype(int)
    col_depth = col_n * dz
    he_layers = int(round(he_bar / dz))
    col_neu = np.minimum(col_n, he_layers)
    col_start = np.concatenate([[0], np.cumsum(col_n)[:-1]])
    nz_max = int(col_n.max())

    ncells = int(col_n.sum())
    cell_col = np.repeat(np.arange(col_n.size), col_n)
    cell_k = np.arange(ncells) - col_start[cell_col]
    cell_i = col_i[cell_col]
    cell_j = col_j[cell_col]
    z_top = cell_k * dz
    z_bot = (cell_k + 1) * dz
    z_center = (cell_k + 0.5) * dz
    he_col = np.minimum(he_bar, col_depth)
    euphotic = z_center < he_col[cell_col]
    volume = np.full(ncells, dx * dy * dz)

    index = -np.ones((nx, ny, nz_max), dtype=int)
    index[cell_i, cell_j, cell_k] = np.arange(ncells)

    fa, fb, farea, fdist, faxis = [], [], [], [], []
    # x faces
    a = index[:-1, :, :]
    b = index[1:, :, :]
    m = (a >= 0) & (b >= 0)
    fa.append(a[m]); fb.append(b[m])
    farea.append(np.full(m.sum(), dy * dz)); fdist.append(np.full(m.sum(), dx))
    faxis.append(np.zeros(m.sum(), dtype=int))
    # y faces
    a = index[:, :-1, :]
    b = index[:, 1:, :]
    m = (a >= 0) & (b >= 0)
    fa.append(a[m]); fb.append(b[m])
    farea.append(np.full(m.sum(), dx * dz)); fdist.append(np.full(m.sum(), dy))
    faxis.append(np.ones(m.sum(), dtype=int))
    # z faces (downward)
    a = index[:, :, :-1]
    b = index[:, :, 1:]
    m = (a >= 0) & (b >= 0)
    fa.append(a[m]); fb.append(b[m])
    farea.append(np.full(m.sum(), dx * dy)); fdist.append(np.full(m.sum(), dz))
    faxis.append(np.full(m.sum(), 2, dtype=int))

    ncol = col_n.size
    surf_cells = col_start
    bot_cells = col_start + col_n - 1
    facet_cell = np.concatenate([surf_cells, bot_cells])
    facet_col = np.concatenate([np.arange(ncol), np.arange(ncol)])
    facet_area = np.full(2 * ncol, dx * dy)
    bottom_kind = np.where(col_depth > he_bar, BOTTOM_APHOTIC, BOTTOM_EUPHOTIC)
    facet_kind = np.concatenate([np.full(ncol, SURFACE), bottom_kind])
    facet_depth = np.concatenate([np.zeros(ncol), col_depth])

    return Grid(
        nx=nx, ny=ny, dx=dx, dy=dy, dz=dz, he_bar=he_bar, depth=depth.copy(),
        col_i=col_i, col_j=col_j, col_depth=col_depth, col_nlayers=col_n,
        col_neuphotic=col_neu, col_start=col_start,
        cell_col=cell_col, cell_i=cell_i, cell_j=cell_j, cell_k=cell_k,
        z_center=z_center, z_top=z_top, z_bot=z_bot, volume=volume, euphotic=euphotic,
        face_a=np.concatenate(fa), face_b=np.concatenate(fb),
        face_area=np.concatenate(farea), face_dist=np.concatenate(fdist),
        face_axis=np.concatenate(faxis),
        facet_cell=facet_cell, facet_col=facet_col, facet_area=facet_area,
        facet_kind=facet_kind, facet_depth=facet_depth,
        index=index,
    )


def euphotic_depth(grid: Grid, column: int) -> float:
    """Local euphotic depth ``min(he_bar, h)`` of a wet column."""
    if not 0 <= column < grid.ncols:
        raise GridError(f"column {column} is not a wet column")
    return float(min(grid.he_bar, grid.col_depth[column]))


def cell_zone(grid: Grid, cell: int) -> str:
    if not 0 <= cell < grid.ncells:
        raise GridError(f"cell {cell} is not a wet cell")
    return EUPHOTIC if grid.euphotic[cell] else APHOTIC


def ramp_depths(nx: int, ny: int, dz: float, depth_min: float, depth_max: float) -> np.ndarray:
    """Staircase bathymetry deepening diagonally from ``depth_min`` to ``depth_max``."""
    if nx == 1 and ny == 1:
        return np.full((1, 1), depth_max)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    frac = (i + j) / (nx + ny - 2)
    nmin = int(round(depth_min / dz))
    nmax = int(round(depth_max / dz))
    return (nmin + np.floor(frac * (nmax - nmin) + 1e-9)) * dz


def grid_from_depths(depths: Sequence[Sequence[float]] | np.ndarray, dx: float, dy: float,
                     dz: float, he_bar: float) -> Grid:
    depth = np.asarray(depths, dtype=float)
    return build_grid(GridConfig(depth.shape[0], depth.shape[1], dx, dy, dz, he_bar, depth))


def read_bathymetry(path) -> GridConfig:
    """Read a bathymetry file.

    First line ``nx ny dx dy dz he_bar``, then ``ny`` rows of ``nx`` depths
    in meters (0 marks a dry column).
    """
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or len(lines[0]) != 6:
        raise GridError(f"{path}: header must be 'nx ny dx dy dz he_bar'")
    try:
        nx, ny = int(lines[0][0]), int(lines[0][1])
        dx, dy, dz, he_bar = (float(v) for v in lines[0][2:])
        rows = lines[1:]
        if len(rows) != ny or any(len(r) != nx for r in rows):
            raise GridError(f"{path}: expected {ny} rows of {nx} depth values")
        depth = np.array([[float(v) for v in r] for r in rows]).T  # -> (nx, ny)
    except ValueError as exc:
        raise GridError(f"{path}: {exc}") from None
    return GridConfig(nx, ny, dx, dy, dz, he_bar, depth)


def write_bathymetry(path, config: GridConfig) -> None:
    with open(path, "w") as fh:
        fh.write(f"{config.nx} {config.ny} {config.dx:g} {config.dy:g} {config.dz:g} {config.he_bar:g}\n")
        for j in range(config.ny):
            fh.write(" ".join(f"{config.depth[i, j]:g}" for i in range(config.nx)) + "\n")
