"""Flat ``key = value`` run configuration with strict validation.

Lines are ``section.key = value``; ``#`` starts a comment.  Unknown and
duplicate keys are rejected, every numeric invariant of the downstream
types is checked at parse time, and relative file paths are resolved
against the directory of the config file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .fields import (Environment, ModelParams, ParameterError, StreamFunctionError, read_stream_function,
                     stream_velocity)
from .geometry import GridError, build_grid, read_bathymetry
from .reaction import lipschitz_constants
from .scenario import (DEFAULT_DEPTH_MAX, DEFAULT_DEPTH_MIN, DEFAULT_DX, DEFAULT_DY, DEFAULT_DZ,
                       DEFAULT_HE_BAR, DEFAULT_I0, DEFAULT_KAPPA, DEFAULT_NX, DEFAULT_NY,
                       DEFAULT_PSI_AMPLITUDE, DEFAULT_STEPS, DEFAULT_T, DEFAULT_Y1, DEFAULT_Y2, Scenario,
                       default_environment, default_grid_config, default_initial_state)
from .solver import PicardConfig, auto_weight


class ConfigError(ValueError):
    pass


AUTO = "auto"

# key -> (type, default); type is one of int, float, str, "path", "auto_float"
SCHEMA: dict[str, tuple[object, object]] = {
    "grid.nx": (int, DEFAULT_NX),
    "grid.ny": (int, DEFAULT_NY),
    "grid.dx": (float, DEFAULT_DX),
    "grid.dy": (float, DEFAULT_DY),
    "grid.dz": (float, DEFAULT_DZ),
    "grid.he_bar": (float, DEFAULT_HE_BAR),
    "grid.depth_min": (float, DEFAULT_DEPTH_MIN),
    "grid.depth_max": (float, DEFAULT_DEPTH_MAX),
    "grid.bathymetry": ("path", None),
    "fields.kappa": (float, DEFAULT_KAPPA),
    "fields.psi_amplitude": (float, DEFAULT_PSI_AMPLITUDE),
    "fields.stream_function": ("path", None),
    "light.I0": (float, DEFAULT_I0),
    "light.shape": (str, "constant"),
    "params.lambda": (float, ModelParams.lam),
    "params.alpha": (float, ModelParams.alpha),
    "params.K_P": (float, ModelParams.K_P),
    "params.K_I": (float, ModelParams.K_I),
    "params.K_W": (float, ModelParams.K_W),
    "params.beta": (float, ModelParams.beta),
    "params.nu": (float, ModelParams.nu),
    "time.T": (float, DEFAULT_T),
    "time.steps": (int, DEFAULT_STEPS),
    "solver.epsilon": ("auto_float", AUTO),
    "solver.weight_C": ("auto_float", AUTO),
    "solver.tol": (float, 1e-10),
    "solver.max_iter": (int, 60),
    "solver.gamma": (float, 0.0),
    "init.y1": (float, DEFAULT_Y1),
    "init.y2": (float, DEFAULT_Y2),
    "output.dir": ("path", "out"),
    "output.snapshot_every": (int, 10),
}


@dataclass
class RunConfig:
    """Validated configuration; ``values`` maps every schema key to its typed value."""

    values: dict[str, object]
    source: Path | None = None
    scenario: Scenario = field(init=False, repr=False)
    picard: PicardConfig = field(init=False, repr=False)

    def __post_init__(self):
        self.scenario = _build_scenario(self.values)
        self.picard = _build_picard(self.values, self.scenario)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output.dir"])

    @property
    def snapshot_every(self) -> int:
        return int(self.values["output.snapshot_every"])


def _convert(key: str, kind, raw: str, base: Path):
    try:
        if kind is int:
            v = float(raw)
            if not v.is_integer():
                raise ValueError
            return int(v)
        if kind is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "auto_float":
            if raw.strip().lower() == AUTO:
                return AUTO
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "path":
            p = Path(raw)
            return p if p.is_absolute() else base / p
        return raw
    except ValueError:
        expected = {int: "an integer", float: "a finite number", "auto_float": "'auto' or a number"}[kind]
        raise ConfigError(f"{key}: expected {expected}, got {raw!r}") from None


def parse_config_text(text: str, base: Path | None = None, source: Path | None = None) -> RunConfig:
    base = base or Path.cwd()
    seen: dict[str, int] = {}
    values = {k: (_convert(k, kind, str(d), base) if kind == "path" and d is not None else d)
              for k, (kind, d) in SCHEMA.items()}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {n}: duplicate key {key!r} (first set on line {seen[key]})")
        if not raw:
            raise ConfigError(f"line {n}: missing value for {key!r}")
        seen[key] = n
        values[key] = _convert(key, SCHEMA[key][0], raw, base)
    try:
        return RunConfig(values, source)
    except (GridError, ParameterError, StreamFunctionError, OSError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, path.parent, path)


def default_config() -> RunConfig:
    return parse_config_text("")


def _require(cond: bool, key: str, constraint: str, value) -> None:
    if not cond:
        raise ConfigError(f"{key} = {value!r} violates {constraint}")


def _build_scenario(v: dict) -> Scenario:
    for key in ("grid.dx", "grid.dy", "grid.dz", "grid.he_bar", "fields.kappa", "time.T"):
        _require(v[key] > 0, key, f"{key.split('.')[1]} > 0", v[key])
    for key in ("grid.nx", "grid.ny", "time.steps", "output.snapshot_every"):
        _require(v[key] >= 1, key, f"{key.split('.')[1]} >= 1", v[key])
    _require(v["light.I0"] >= 0, "light.I0", "I0 >= 0", v["light.I0"])
    _require(v["light.shape"] in ("constant", "diurnal"), "light.shape", "shape in {constant, diurnal}",
             v["light.shape"])
    _require(v["fields.psi_amplitude"] >= 0, "fields.psi_amplitude", "psi_amplitude >= 0",
             v["fields.psi_amplitude"])

    names = {"lambda": "lam", "alpha": "alpha", "K_P": "K_P", "K_I": "K_I", "K_W": "K_W",
             "beta": "beta", "nu": "nu"}
    for name in names:
        key = f"params.{name}"
        if name == "nu":
            _require(0 < v[key] < 1, key, "0 < nu < 1", v[key])
        else:
            _require(v[key] > 0, key, f"{name} > 0", v[key])
    params = ModelParams(**{attr: v[f"params.{n}"] for n, attr in names.items()})

    if v["grid.bathymetry"] is not None:
        gcfg = read_bathymetry(v["grid.bathymetry"])
    else:
        _require(0 < v["grid.depth_min"] <= v["grid.depth_max"], "grid.depth_min",
                 "0 < depth_min <= depth_max", v["grid.depth_min"])
        for key in ("grid.depth_min", "grid.depth_max"):
            q = v[key] / v["grid.dz"]
            _require(abs(q - round(q)) <= 1e-9 * max(q, 1.0), key, "depth a multiple of grid.dz", v[key])
        gcfg = default_grid_config(v["grid.nx"], v["grid.ny"], v["grid.dx"], v["grid.dy"], v["grid.dz"],
                                   v["grid.he_bar"], v["grid.depth_min"], v["grid.depth_max"])
    grid = build_grid(gcfg)
    if v["fields.stream_function"] is not None:
        flux = stream_velocity(grid, read_stream_function(v["fields.stream_function"], grid))
        env = Environment(flux, v["fields.kappa"], I0=v["light.I0"], light_shape=v["light.shape"])
    else:
        env = default_environment(grid, v["fields.kappa"], v["fields.psi_amplitude"], v["light.I0"],
                                  v["light.shape"])
    y0 = default_initial_state(grid, v["init.y1"], v["init.y2"])
    return Scenario(grid, env, params, y0, v["time.T"], v["time.steps"])


def _build_picard(v: dict, s: Scenario) -> PicardConfig:
    km = s.env.kappa_min
    eps = v["solver.epsilon"]
    if eps != AUTO:
        _require(0 < eps < km / 2, "solver.epsilon", f"0 < epsilon < kappa_min/2 = {km / 2:g}", eps)
    _require(v["solver.tol"] > 0, "solver.tol", "tol > 0", v["solver.tol"])
    _require(v["solver.max_iter"] >= 1, "solver.max_iter", "max_iter >= 1", v["solver.max_iter"])
    _require(v["solver.gamma"] >= 0, "solver.gamma", "gamma >= 0", v["solver.gamma"])
    C = v["solver.weight_C"]
    if C != AUTO:
        L1 = lipschitz_constants(s.params, s.grid).L1
        e = km / 4 if eps == AUTO else eps
        # the contraction argument needs C > L1^2/(2 eps) exp(2 T kappa_min)
        try:
            need = auto_weight(L1, e, s.T, km) / 4
        except OverflowError:
            need = math.inf
        _require(C > need, "solver.weight_C", f"weight_C > L1^2/(2 eps) exp(2 T kappa_min) = {need:.6g}", C)
    return PicardConfig(epsilon=None if eps == AUTO else eps, weight_C=None if C == AUTO else C,
                        tol=v["solver.tol"], max_iter=v["solver.max_iter"], gamma=v["solver.gamma"])
