"""Command-line entry point: ``po4dop <command> [options]``.

Exit codes: 0 success, 1 solver failure, 2 configuration error, 3 a check
or invariant failed.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checks import SUITES, constants_rows, run_suite, write_check_rows, write_constants
from .config import ConfigError, RunConfig, default_config, parse_config
from .fields import PARAM_NAMES, write_snapshot
from .galerkin import COEFFICIENT_COLUMNS, GalerkinError, coefficient_rows, galerkin_solve
from .identify import (SamplingPlan, gauss_newton, initial_guess, read_observations, synthesize_observations,
                       write_fit, write_observations)
from .reaction import lipschitz_constants
from .solver import (PicardConfig, SolverError, energy_estimate_check, picard_solve,
                     tangent_solve, write_energy_report, write_picard_report)
from .transport import Norms, diagnostics_rows, write_diagnostics

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3


def _load(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else default_config()
    if args.out is not None:
        cfg.values["output.dir"] = Path(args.out)
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot_indices(steps: int, every: int) -> list[int]:
    idx = list(range(0, steps + 1, every))
    if idx[-1] != steps:
        idx.append(steps)
    return idx


def _forward(cfg: RunConfig, args, report_path: Path | None = None):
    s = cfg.scenario
    try:
        return picard_solve(s.y0, s.env, s.grid, s.params, cfg.picard, s.T, s.steps)
    except SolverError as exc:
        # flush whatever the iteration produced before failing
        if report_path is not None and exc.report is not None:
            write_picard_report(report_path, exc.report, timing=args.timing)
        raise


def cmd_forward(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    s = cfg.scenario
    traj, report = _forward(cfg, args, out / "picard_report.csv")
    for k in _snapshot_indices(s.steps, cfg.snapshot_every):
        write_snapshot(out / f"snapshot_{k:05d}.csv", s.grid, traj.y[k])
    write_diagnostics(out / "diagnostics.csv", diagnostics_rows(traj, s.grid, s.env, s.params))
    print(f"forward: {report.iterations} Picard iterations, {s.steps} steps, output in {out}")
    return EXIT_OK


def cmd_picard(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    s = cfg.scenario
    traj, report = _forward(cfg, args, out / "picard_report.csv")
    write_picard_report(out / "picard_report.csv", report, timing=args.timing)
    L1 = lipschitz_constants(s.params, s.grid).L1
    energy = energy_estimate_check(traj, None, s.y0, L1, report.epsilon, s.env, s.grid)
    write_energy_report(out / "energy.csv", [energy])
    write_constants(out / "constants.csv", constants_rows(s, cfg.picard))
    ratio = report.asymptotic_ratio()
    print(f"picard: converged={report.converged} iterations={report.iterations} "
          f"asymptotic_ratio={ratio:.6g} bound={report.bound:.6g} L_A={report.L_A:.6g}")
    return EXIT_OK


def cmd_tangent(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    s = cfg.scenario
    tight = PicardConfig(cfg.picard.epsilon, cfg.picard.weight_C, tol=1e-15,
                         max_iter=max(cfg.picard.max_iter, 200), gamma=cfg.picard.gamma)
    y, _ = picard_solve(s.y0, s.env, s.grid, s.params, tight, s.T, s.steps)
    h = tangent_solve(y, args.param, s.env, s.grid, s.params, gamma=tight.gamma)
    for k in _snapshot_indices(s.steps, cfg.snapshot_every):
        write_snapshot(out / f"tangent_{args.param}_{k:05d}.csv", s.grid, h.y[k])
    if not args.fd_check:
        print(f"tangent: wrote sensitivities to {args.param} in {out}")
        return EXIT_OK
    p = s.params.get(args.param)
    d = args.delta * p
    yp, _ = picard_solve(s.y0, s.env, s.grid, s.params.with_value(args.param, p + d), tight, s.T, s.steps)
    ym, _ = picard_solve(s.y0, s.env, s.grid, s.params.with_value(args.param, p - d), tight, s.T, s.steps)
    fd = (yp.y - ym.y) / (2 * d)
    hmax = float(np.max(np.abs(h.y)))
    err = float(np.max(np.abs(fd - h.y))) / hmax if hmax > 0 else float(np.max(np.abs(fd)))
    passed = err <= 1e-3
    with open(out / f"tangent_{args.param}_fd.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("param", "delta", "max_abs_tangent", "max_rel_error", "bound", "passed"))
        wr.writerow((args.param, repr(d), repr(hmax), repr(err), repr(1e-3), str(passed).lower()))
    print(f"tangent: {args.param} finite-difference relative error {err:.3e} (bound 1e-3)")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_identify(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    s = cfg.scenario
    active = [a.strip() for a in args.active.split(",") if a.strip()]
    for a in active:
        if a not in PARAM_NAMES:
            raise ConfigError(f"--active: unknown parameter {a!r}; expected one of {PARAM_NAMES}")
    if args.synthesize is not None:
        if args.seed is None:
            raise ConfigError("--synthesize requires --seed")
        plan = SamplingPlan.regular(s.grid, s.steps)
        obs = synthesize_observations(s.params, s.env, s.grid, s.y0, plan, s.T, s.steps, sigma=args.noise,
                                      seed=args.seed, relative=args.relative)
        write_observations(args.synthesize, obs, s.grid)
        print(f"identify: wrote {len(obs)} observations to {args.synthesize}")
        if args.obs is None:
            return EXIT_OK
    if args.obs is None:
        raise ConfigError("identify needs --obs FILE (or --synthesize FILE --seed S)")
    try:
        obs = read_observations(args.obs, s.grid)
        obs.check(s.grid, s.steps)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"--obs {args.obs}: {exc}") from exc
    # the configured parameters are the starting point, optionally scaled
    p0 = initial_guess(s.params, active, args.init_factor)
    fit = gauss_newton(p0, active, obs, s.env, s.grid, s.y0, s.T, s.steps, cfg=cfg.picard)
    write_fit(out / "fit.csv", fit)
    rec = ", ".join(f"{n}={v:.6g}" for n, v in fit.recovered().items())
    print(f"identify: converged={fit.converged} misfit={fit.misfits[-1]:.6g} {rec}")
    return EXIT_OK


def cmd_galerkin(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    s = cfg.scenario
    if not s.grid.is_flat or s.grid.ncols != s.grid.nx * s.grid.ny:
        raise ConfigError("galerkin needs a flat box: set grid.depth_min = grid.depth_max "
                          "and no dry columns")
    g = galerkin_solve(args.modes, s.env, s.grid, s.params, s.y0, s.T, s.steps)
    with open(out / "galerkin_coefficients.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(COEFFICIENT_COLUMNS)
        for k, t, c, p, q, r, u in coefficient_rows(g):
            wr.writerow((k, repr(float(t)), c, p, q, r, repr(u)))
    if args.compare:
        fv, _ = _forward(cfg, args)
        gt = g.grid_trajectory()
        norms = Norms(s.grid)
        with open(out / "galerkin_compare.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(("t", "l2_difference", "l2_fv", "relative"))
            for k, t in enumerate(fv.times):
                d, n = norms.l2(fv.y[k] - gt.y[k]), norms.l2(fv.y[k])
                wr.writerow((repr(float(t)), repr(d), repr(n), repr(d / n if n > 0 else 0.0)))
    print(f"galerkin: {g.system.size} modes, output in {out}")
    return EXIT_OK


def cmd_check(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    rows = run_suite(args.suite, args.seed)
    write_check_rows(out / "check_results.csv", rows)
    write_constants(out / "constants.csv", constants_rows(cfg.scenario, cfg.picard, seed=args.seed))
    failed = [r for r in rows if not r.passed]
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.suite}.{r.check}: {r.value:.6g} (bound {r.bound:.6g})")
    return EXIT_CHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="po4dop", description="PO4-DOP marine phosphorus model")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="key=value config file (defaults if omitted)")
    common.add_argument("-o", "--out", help="output directory (overrides output.dir)")
    common.add_argument("--timing", action="store_true",
                        help="record wall-clock times in the Picard report (non-deterministic)")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("forward", parents=[common], help="nonlinear forward run: snapshots + diagnostics")
    sub.add_parser("picard", parents=[common], help="Picard iteration report, energy check, constants")

    p = sub.add_parser("tangent", parents=[common], help="tangent-linear sensitivity to one parameter")
    p.add_argument("--param", required=True, choices=PARAM_NAMES)
    p.add_argument("--fd-check", action="store_true", help="compare against central differences")
    p.add_argument("--delta", type=float, default=1e-4, help="relative finite-difference step")

    p = sub.add_parser("identify", parents=[common], help="Gauss-Newton parameter fit")
    p.add_argument("--obs", help="observations CSV")
    p.add_argument("--active", default="lambda,alpha", help="comma-separated parameters to fit")
    p.add_argument("--init-factor", type=float, default=1.0,
                   help="start from the configured parameters times this factor")
    p.add_argument("--synthesize", help="write synthetic observations to this CSV first")
    p.add_argument("--seed", type=int, help="noise seed (required with --synthesize)")
    p.add_argument("--noise", type=float, default=0.0, help="noise standard deviation")
    p.add_argument("--relative", action="store_true", help="noise relative to each sample")

    p = sub.add_parser("galerkin", parents=[common], help="cosine-mode Galerkin run on a flat box")
    p.add_argument("--modes", type=int, required=True, help="modes per axis")
    p.add_argument("--compare", action="store_true", help="also write the L2 discrepancy to Picard")

    p = sub.add_parser("check", parents=[common], help="property and oracle suites")
    p.add_argument("--suite", required=True, choices=sorted(SUITES) + ["all"])
    p.add_argument("--seed", type=int, required=True)
    return ap


COMMANDS = {"forward": cmd_forward, "picard": cmd_picard, "tangent": cmd_tangent,
            "identify": cmd_identify, "galerkin": cmd_galerkin, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, GalerkinError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
