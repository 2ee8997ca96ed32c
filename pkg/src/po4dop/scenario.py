"""Desk-scale default setup shared by the CLI, the check suites and the tests.

Units: metres and years.  The default basin is an 8 x 8 column ramp from
50 m to 150 m with 10 m layers and a 100 m maximal euphotic depth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Environment, ModelParams, TracerState, default_stream_function, stream_velocity
from .geometry import Grid, GridConfig, build_grid, ramp_depths

DEFAULT_NX = DEFAULT_NY = 8
DEFAULT_DX = DEFAULT_DY = 100.0
DEFAULT_DZ = 10.0
DEFAULT_HE_BAR = 100.0
DEFAULT_DEPTH_MIN = 50.0
DEFAULT_DEPTH_MAX = 150.0
DEFAULT_KAPPA = 100.0
DEFAULT_PSI_AMPLITUDE = 2000.0
DEFAULT_I0 = 30.0
DEFAULT_T = 1.0
DEFAULT_STEPS = 100
DEFAULT_Y1 = 2.0
DEFAULT_Y2 = 0.2


def default_grid_config(nx: int = DEFAULT_NX, ny: int = DEFAULT_NY, dx: float = DEFAULT_DX,
                        dy: float = DEFAULT_DY, dz: float = DEFAULT_DZ,
                        he_bar: float = DEFAULT_HE_BAR, depth_min: float = DEFAULT_DEPTH_MIN,
                        depth_max: float = DEFAULT_DEPTH_MAX) -> GridConfig:
    return GridConfig(nx, ny, dx, dy, dz, he_bar, ramp_depths(nx, ny, dz, depth_min, depth_max))


def default_grid(**kw) -> Grid:
    return build_grid(default_grid_config(**kw))


def default_environment(grid: Grid, kappa=DEFAULT_KAPPA, amplitude: float = DEFAULT_PSI_AMPLITUDE,
                        I0: float = DEFAULT_I0, light_shape: str = "constant") -> Environment:
    flux = stream_velocity(grid, default_stream_function(grid, amplitude))
    return Environment(flux, kappa, I0=I0, light_shape=light_shape)


def default_initial_state(grid: Grid, y1: float = DEFAULT_Y1, y2: float = DEFAULT_Y2,
                          ripple: float = 0.1) -> TracerState:
    """Smooth, strictly positive initial state (phosphate well away from zero)."""
    x = (grid.cell_i + 0.5) / grid.nx
    y = (grid.cell_j + 0.5) / grid.ny
    z = grid.z_center / grid.h_max
    shape = np.cos(np.pi * x) * np.cos(np.pi * y) + np.cos(np.pi * z)
    return TracerState(y1 * (1.0 + ripple * shape), y2 * (1.0 + ripple * shape))


@dataclass
class Scenario:
    grid: Grid
    env: Environment
    params: ModelParams = field(default_factory=ModelParams)
    y0: TracerState | None = None
    T: float = DEFAULT_T
    steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if self.y0 is None:
            self.y0 = default_initial_state(self.grid)

    @property
    def dt(self) -> float:
        return self.T / self.steps


def default_scenario(**grid_kw) -> Scenario:
    grid = default_grid(**grid_kw)
    return Scenario(grid, default_environment(grid))
