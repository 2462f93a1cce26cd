"""Command-line orchestration for runs, audits, and experiments.

Exit codes: 0 success (and all audits passed), 1 audit failure, 2 usage or
configuration error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import build_initial_state, parse_config
from .diagnostics import (
    audit_bounds,
    audit_dissipation,
    comparison_experiment,
    compute_certificate,
    delta_continuation,
)
from .energy import FieldPair
from .errors import ConfigError, ConvergenceError, KwcError
from .mesh import build_mesh
from .model import validate_assumptions
from .scheme import State, Trajectory, run_scheme

EXIT_OK = 0
EXIT_AUDIT = 1
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3


def _load(args):
    cfg = parse_config(args.config)
    if getattr(args, "steps", None):
        cfg.n_steps = args.steps
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    mesh = build_mesh(cfg.params.grid)
    return cfg, mesh


def _audit_and_report(traj, mesh, params, tol):
    rows = audit_dissipation(traj, mesh, params)
    scale = 1.0 + rows[0].rhs if rows else 1.0
    worst = min((r.slack for r in rows), default=0.0)
    diss_ok = worst >= -tol * scale
    bounds = audit_bounds(traj, params.r0, params.r1)
    bounds_ok = bounds.passed(1e-9)
    print(
        f"dissipation: worst slack {worst:.3e} "
        f"(allowed >= {-tol * scale:.3e}) -> {'ok' if diss_ok else 'FAIL'}",
        file=sys.stderr,
    )
    print(
        f"bounds: max excursion {bounds.max_excursion:.3e} "
        f"-> {'ok' if bounds_ok else 'FAIL'}",
        file=sys.stderr,
    )
    return diss_ok and bounds_ok


def cmd_validate(args):
    cfg = parse_config(args.config)
    report = validate_assumptions(cfg.params)
    print(report, file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CONFIG


def cmd_run(args):
    cfg, mesh = _load(args)
    initial = build_initial_state(mesh, cfg.params, cfg)
    traj = run_scheme(mesh, cfg.params, initial, cfg.n_steps, cfg.solver)
    os.makedirs(cfg.output_dir, exist_ok=True)
    traj.export_energy_csv(os.path.join(cfg.output_dir, "energy.csv"), mesh)
    traj.save(os.path.join(cfg.output_dir, "trajectory.npz"))
    every = max(1, cfg.snapshot_interval)
    for s in traj.states:
        if s.step_index % every == 0 or s.step_index == cfg.n_steps:
            mesh.dump_field(
                os.path.join(cfg.output_dir, f"snap_{s.step_index}_eta.csv"), s.eta.bulk
            )
            mesh.dump_field(
                os.path.join(cfg.output_dir, f"snap_{s.step_index}_theta.csv"),
                s.theta.bulk,
            )
    ok = _audit_and_report(traj, mesh, cfg.params, args.tol)
    print(f"wrote {cfg.output_dir}/energy.csv and trajectory.npz", file=sys.stderr)
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_audit(args):
    traj = Trajectory.load(args.trajectory)
    mesh = build_mesh(traj.params.grid)
    ok = _audit_and_report(traj, mesh, traj.params, args.tol)
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_compare(args):
    cfg, mesh = _load(args)
    initial1 = build_initial_state(mesh, cfg.params, cfg)
    # ordered partner: pushed toward the upper admissible bounds pointwise
    eta2 = 1.0 - 0.5 * (1.0 - initial1.eta.bulk)
    theta2 = initial1.theta.bulk + 0.25 * (cfg.params.r1 - initial1.theta.bulk)
    initial2 = State(FieldPair(eta2), FieldPair(theta2))
    report = comparison_experiment(
        mesh, cfg.params, initial1, initial2, cfg.n_steps, cfg.solver
    )
    ok = report.nonincreasing(args.tol)
    print(
        f"eta positive-part norms: {report.eta_pos_norms[0]:.6e} -> "
        f"{report.eta_pos_norms[-1]:.6e}",
        file=sys.stderr,
    )
    print(
        f"theta positive-part norms: {report.theta_pos_norms[0]:.6e} -> "
        f"{report.theta_pos_norms[-1]:.6e}",
        file=sys.stderr,
    )
    print(f"contraction: {'ok' if ok else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_certificate(args):
    cfg, mesh = _load(args)
    initial = build_initial_state(mesh, cfg.params, cfg)
    traj = run_scheme(mesh, cfg.params, initial, cfg.n_steps, cfg.solver)
    cert = compute_certificate(mesh, cfg.params, traj.states[-1])
    os.makedirs(cfg.output_dir, exist_ok=True)
    cert.to_csv(os.path.join(cfg.output_dir, "certificate.csv"), mesh)
    b1_ok = bool(
        np.all(cert.b1_residual >= -1e-12)
        and np.all(cert.b1_residual <= cfg.params.delta + 1e-12)
    )
    norm_ok = cert.max_norm_omega < 1.0
    labels = {}
    for row in cert.b2_rows:
        labels[row.label] = labels.get(row.label, 0) + 1
    print(
        f"max |omega*| = {cert.max_norm_omega:.12f} -> "
        f"{'ok' if norm_ok else 'FAIL'}",
        file=sys.stderr,
    )
    print(
        f"pairing gap in [0, delta]: {'ok' if b1_ok else 'FAIL'} "
        f"(max {cert.b1_residual.max():.3e}, delta {cfg.params.delta})",
        file=sys.stderr,
    )
    print(f"boundary classification: {labels}", file=sys.stderr)
    return EXIT_OK if (b1_ok and norm_ok) else EXIT_AUDIT


def cmd_sweep_delta(args):
    cfg, mesh = _load(args)
    deltas = [float(d) for d in args.deltas.split(",")]
    initial = build_initial_state(mesh, cfg.params, cfg)
    table = delta_continuation(
        mesh, cfg.params, deltas, initial, cfg.n_steps, cfg.solver, workers=args.workers
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    table.to_csv(os.path.join(cfg.output_dir, "continuation.csv"))
    failed = [r for r in table.rows if r.error]
    for r in table.rows:
        if r.error:
            print(f"delta={r.delta}: FAILED ({r.error})", file=sys.stderr)
        else:
            print(
                f"delta={r.delta}: relaxed {r.relaxed_total:.6e} "
                f"singular {r.singular_total:.6e} "
                f"max jump {r.max_boundary_jump:.3e}",
                file=sys.stderr,
            )
    if table.theta_distances:
        print(f"consecutive distances: {table.theta_distances}", file=sys.stderr)
    return EXIT_NONCONVERGENCE if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="kwcdyn",
        description="Grain-boundary solver with built-in verification audits",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, steps=True, out=True, tol=True):
        sp.add_argument("--config", required=True, help="TOML config file")
        if steps:
            sp.add_argument("--steps", type=int, default=None, help="override step count")
        if out:
            sp.add_argument("--out", default=None, help="override output directory")
        if tol:
            sp.add_argument("--tol", type=float, default=1e-8, help="audit tolerance")

    sp = sub.add_parser("run", help="run a trajectory and audit it")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("audit", help="audit a saved trajectory")
    sp.add_argument("trajectory", help="trajectory.npz from a previous run")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("compare", help="coupled order-comparison experiment")
    common(sp, out=False)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("certificate", help="singular-operator certificate at the final state")
    common(sp, tol=False)
    sp.set_defaults(func=cmd_certificate)

    sp = sub.add_parser("sweep-delta", help="regularization continuation study")
    common(sp, tol=False)
    sp.add_argument("--deltas", required=True, help="comma-separated decreasing list")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep_delta)

    sp = sub.add_parser("validate", help="validate a config file")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_validate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        for key, line, reason in err.diagnostics:
            loc = f" (line {line})" if line else ""
            print(f"  {key}{loc}: {reason}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as err:
        print(f"solver failed to converge: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (KwcError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
