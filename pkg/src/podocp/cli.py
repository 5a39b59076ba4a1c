"""Command-line interface: ``podocp <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import bench
from .io import save_basis, save_trajectory_csv, save_trajectory_vtk
from .ocp import optimality_residual
from .pod import build_snapshots, compute_pod, energy_ratio, mass_factor
from .sensitivity import solve_cse, solve_fd, svd_sensitivities


def parse_value(text: str) -> float:
    """Float or fraction such as ``1/80``."""
    return float(Fraction(text.strip())) if "/" in text else float(text)


def parse_grid(text: str) -> tuple:
    """Diffusion grid from inverse values: ``80:5:120`` or ``80,100,120``."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) == 2:
            start, stop, step = parts[0], parts[1], 1.0
        elif len(parts) == 3:
            start, step, stop = parts
        else:
            raise argparse.ArgumentTypeError(f"bad grid range {text!r}")
        if step <= 0:
            raise argparse.ArgumentTypeError("grid step must be positive")
        inv = np.arange(start, stop + 0.5 * step, step)
    else:
        inv = np.array([parse_value(p) for p in text.split(",") if p.strip()])
    if inv.size == 0 or np.any(inv <= 0):
        raise argparse.ArgumentTypeError("grid needs positive inverse-diffusion values")
    return tuple(1.0 / v for v in inv)


def _csv_list(text):
    return tuple(p.strip() for p in text.split(",") if p.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with configuration fields")
    common.add_argument("--profile", choices=sorted(bench.PROFILES), default=None,
                        help="preset resolution (default: paper)")
    common.add_argument("--eps", type=parse_value, help="diffusion value (nominal, or target for solve-reduced)")
    common.add_argument("--grid", type=parse_grid, help="inverse diffusion grid, e.g. 80:5:120")
    common.add_argument("--method", type=_csv_list,
                        help="basis methods (BPOD,ExtPOD,ExpPOD,SAIM); CSE or FD for sensitivities")
    common.add_argument("--kind", type=_csv_list, help="snapshot kinds (Y,P,YP)")
    common.add_argument("--rank", type=int, help="fixed number of POD modes")
    common.add_argument("--gamma", type=float, help="energy threshold for the rank")
    common.add_argument("--dmu", type=float, help="finite-difference increment")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes for the sweep")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="podocp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve-full", parents=[common], help="optimize the full-order problem")
    p.add_argument("--vtk", action="store_true", help="also write VTK time series")
    sub.add_parser("build-basis", parents=[common], help="POD basis from a full solve")
    sub.add_parser("sensitivities", parents=[common], help="trajectory and basis sensitivities")
    p = sub.add_parser("solve-reduced", parents=[common], help="reduced solve at --eps vs the full solve")
    p.add_argument("--target", type=parse_value, help="target diffusion (defaults to --eps)")
    sub.add_parser("sweep", parents=[common], help="run the parameter sweep and write results")
    p = sub.add_parser("emit", parents=[common], help="re-emit saved sweep records")
    p.add_argument("records", type=Path, help="records.json written by sweep")
    p.add_argument("--format", choices=("csv", "plotdata", "all"), default="all")
    return parser


def config_from_args(args, nominal_from_eps=True) -> bench.SweepConfig:
    overrides = {}
    if args.eps is not None and nominal_from_eps:
        overrides["epsilon0"] = args.eps
    if args.grid is not None:
        overrides["grid"] = args.grid
    if args.method is not None and args.command != "sensitivities":
        overrides["methods"] = args.method
    if args.method is not None and args.command == "sensitivities":
        overrides["sensitivity"] = args.method[0].upper()
    if args.kind is not None:
        overrides["kinds"] = args.kind
    if args.rank is not None:
        overrides["rank"] = args.rank
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
        overrides.setdefault("rank", None)
    if args.dmu is not None:
        overrides["delta_mu"] = args.dmu
    if args.out is not None:
        overrides["out"] = str(args.out)
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.config is not None:
        return bench.SweepConfig.from_json(args.config, profile=args.profile or "paper", **overrides)
    return bench.SweepConfig.from_profile(args.profile or "paper", **overrides)


def _log(args):
    return (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))


def cmd_solve_full(args):
    cfg = config_from_args(args)
    out = Path(cfg.out)
    y, u, p, stats = bench.solve_full(cfg)
    setup = bench.make_setup(cfg)
    res = optimality_residual(setup, y, u, p)
    for traj in (y, u, p):
        save_trajectory_csv(traj, out / f"{traj.kind}.csv")
        if args.vtk:
            save_trajectory_vtk(setup.space, traj, out / "vtk")
    summary = {
        "epsilon": setup.epsilon, "n_dofs": setup.n_dofs, "iterations": stats.iterations,
        "cg_iterations": stats.cg_iterations, "cost": stats.cost_history[-1],
        "gradient_norm": stats.gradient_norm_history[-1], "residuals": res._asdict(),
        "wall_time": stats.wall_time,
    }
    (out / "solve_full.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_build_basis(args):
    cfg = config_from_args(args)
    out = Path(cfg.out)
    y, _, p, _ = bench.solve_full(cfg)
    mf = mass_factor(bench.make_setup(cfg))
    for kind in cfg.kinds:
        basis = compute_pod(build_snapshots(y, p, kind, parameter=cfg.epsilon0), mf, **bench.basis_rule(cfg))
        path = save_basis(out / f"basis_{kind}", basis)
        E = energy_ratio(basis.singular_values)[basis.n_modes - 1]
        print(f"{kind}: l = {basis.n_modes} (rank {basis.rank}, energy {E:.8f}) -> {path}")
    return 0


def cmd_sensitivities(args):
    cfg = config_from_args(args)
    out = Path(cfg.out)
    setup = bench.make_setup(cfg)
    y, u, p, _ = bench.solve_full(cfg)
    if cfg.sensitivity == "CSE":
        triple = solve_cse(setup, y, u, p, tol=cfg.sensitivity_tol)
    else:
        triple = solve_fd(lambda mu: bench.make_setup(cfg, mu), cfg.epsilon0, cfg.delta_mu,
                          tol=cfg.sensitivity_tol, jobs=min(cfg.jobs, 2))
    for traj in (triple.s_y, triple.s_p, triple.s_u):
        save_trajectory_csv(traj, out / f"{traj.kind}.csv")
    mf = mass_factor(setup)
    for kind in cfg.kinds:
        basis = compute_pod(build_snapshots(y, p, kind, parameter=cfg.epsilon0), mf, **bench.basis_rule(cfg))
        sens = svd_sensitivities(basis, build_snapshots(triple.s_y, triple.s_p, kind))
        save_basis(out / f"basis_mu_{kind}", sens.Psi_mu, kind=kind, parameter=cfg.epsilon0,
                   method="sensitivity", route=triple.method, lambda_mu=[float(v) for v in sens.lambda_mu])
        print(f"{kind}: l = {basis.n_modes}, lambda_mu = {np.array2string(sens.lambda_mu, precision=4)}")
    return 0


def cmd_solve_reduced(args):
    cfg = config_from_args(args, nominal_from_eps=False)
    target = args.target if args.target is not None else (args.eps if args.eps is not None else cfg.epsilon0)
    if "SAIM" in cfg.methods:
        lo, hi = sorted(cfg.anchors)
        if not lo <= target <= hi:
            raise ValueError(f"target {target} lies outside the SAIM anchors {cfg.anchors}")
    sol0 = bench.solve_full(cfg)
    sens = bench.compute_sensitivities(cfg, sol0) if {"ExtPOD", "ExpPOD"} & set(cfg.methods) else None
    payload, _ = bench.prepare_bases(cfg, sol0, sens)
    bench_sol = (sol0[0], sol0[1], sol0[3].wall_time) if target == cfg.epsilon0 else None
    records = bench._grid_point(cfg, target, payload, bench_sol)
    for r in records:
        status = f"FAILED {r.error}" if r.failed else (
            f"l={r.l} state_err={r.state_err:.4e} control_err={r.control_err:.4e} "
            f"t_reduced={r.t_reduced:.3f}s t_full={r.t_full:.3f}s")
        print(f"epsilon={r.epsilon:.6g} {r.method} {r.kind}: {status}")
    return _finish(records)


def cmd_sweep(args):
    cfg = config_from_args(args)
    records = bench.run_sweep(cfg, log=_log(args))
    written = bench.emit(records, "all", cfg.out)
    bench.save_records(records, Path(cfg.out) / "records.json")
    (Path(cfg.out) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    for path in written:
        _log(args)(f"wrote {path}")
    return _finish(records)


def cmd_emit(args):
    records = bench.load_records(args.records)
    out = args.out if args.out is not None else args.records.parent
    for path in bench.emit(records, args.format, out):
        print(path)
    return 0


def _finish(records) -> int:
    if any(r.failed for r in records):
        print(bench.failure_summary(records), file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "solve-full": cmd_solve_full,
    "build-basis": cmd_build_basis,
    "sensitivities": cmd_sensitivities,
    "solve-reduced": cmd_solve_reduced,
    "sweep": cmd_sweep,
    "emit": cmd_emit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"podocp {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
