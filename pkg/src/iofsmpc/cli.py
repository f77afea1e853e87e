"""Command-line front end: ``iofsmpc synthesize | simulate | verify``.

Exit codes: 0 success, 1 other library error, 2 configuration error,
3 synthesis error, 4 infeasible QP in strict mode, 5 failed verification.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, config as cfgmod, synthesis, uncertainty
from .controllers import build_controllers
from .errors import (ConfigError, DomainError, EmptySet, InfeasibleTightening, IofSmpcError,
                     MaxIterations, NoConvergence, NotPSD, PreconditionViolated, QpInfeasible,
                     SingularInnovation, UnstableDynamics)
from .model import CONTROLLER_NAMES, validate_system
from .simlab import format_summary, run_campaign, write_report_csvs

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_SYNTHESIS, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3, 4, 5
SYNTHESIS_ERRORS = (PreconditionViolated, NoConvergence, NotPSD, SingularInnovation, UnstableDynamics,
                    InfeasibleTightening, EmptySet, MaxIterations, DomainError)
TERMINAL_FLAGS = {"mpi": "mpi_set", "none": "none"}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write(path, text: str) -> str:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _manifest(out_dir, cfg, files, elapsed: float, command: str) -> str:
    def rel(p):
        return os.path.relpath(p, out_dir)

    doc = {
        "command": command,
        "config_hash": cfgmod.config_hash(cfg),
        "artifact_version": __version__,
        "seeds": {"master_seed": cfg.experiment.master_seed},
        "timing_seconds": round(elapsed, 3),
        "files": [{"path": rel(p), "sha256": _sha256(p)} for p in sorted(files)],
    }
    return _write(os.path.join(out_dir, "manifest.json"), json.dumps(doc, indent=2) + "\n")


def _load(args) -> list:
    """[(label, RunConfig)] with command-line overrides applied."""
    if args.config:
        cfgs = [(None, cfgmod.load_config(args.config))]
    elif getattr(args, "preset", None):
        cfgs = [(args.preset, cfgmod.load_preset(args.preset))]
    else:
        cfgs = [(name, cfgmod.load_preset(name)) for name in cfgmod.PRESETS]
    out = []
    for label, cfg in cfgs:
        ctrls = None
        if getattr(args, "controllers", None):
            ctrls = [c.strip() for c in args.controllers.split(",") if c.strip()]
        cfg = cfgmod.with_overrides(
            cfg,
            master_seed=getattr(args, "seed", None),
            num_trajectories=getattr(args, "trajectories", None),
            controllers=ctrls,
            horizon=getattr(args, "horizon", None),
            terminal_mode=TERMINAL_FLAGS.get(getattr(args, "terminal", None) or "", None),
        )
        out.append((label, cfg))
    return out


def _matrix_text(name, M) -> str:
    M = np.atleast_2d(M)
    rows = "\n".join(" ".join(repr(float(v)) for v in r) for r in M)
    return f"# {name} {M.shape[0]}x{M.shape[1]}\n{rows}\n"


def cmd_synthesize(args) -> int:
    runs = _load(args)
    multi = len(runs) > 1
    for label, cfg in runs:
        out_dir = os.path.join(args.out_dir, label) if multi else args.out_dir
        os.makedirs(out_dir, exist_ok=True)
        t0 = time.perf_counter()
        sys_ = cfg.system
        report = validate_system(sys_, cfg.weights.Q)
        if not report.ok:
            raise PreconditionViolated(f"system fails stabilizability/detectability checks: {report}")
        bundle = synthesis.synthesize(sys_, cfg.weights.Q, cfg.weights.R, P=cfg.weights.P)
        model = uncertainty.build_combined_error_model(sys_, bundle.K, bundle.L)
        H = cfg.experiment.sim_steps + cfg.experiment.horizon
        sched = uncertainty.tightening_schedule(model, cfg.constraints, bundle.K, H, bundle.Sigma_xi_inf)
        files = []
        text = "".join(_matrix_text(n, M) for n, M in (
            ("L", bundle.L), ("K", bundle.K), ("P", bundle.P), ("P_hat", bundle.P_hat),
            ("Sigma_inf", bundle.Sigma_xi_inf)))
        files.append(_write(os.path.join(out_dir, "gains.txt"), text))
        files.append(_write(os.path.join(out_dir, "residuals.json"),
                            json.dumps({k: float(v) for k, v in bundle.residuals.items()}, indent=2) + "\n"))
        p = os.path.join(out_dir, "tightening.csv")
        uncertainty.write_schedule_csv(sched, p)
        files.append(p)
        if cfg.experiment.terminal_mode == "mpi_set":
            suite = build_controllers(sys_, cfg.weights, cfg.constraints, cfg.experiment, L=bundle.L, K_lqr=bundle.K)
            for tag, poly in suite.terminals.items():
                files.append(_write(os.path.join(out_dir, f"terminal_{tag}.txt"), poly.to_text()))
        files.append(_write(os.path.join(out_dir, "config.toml"), cfgmod.resolved_toml(cfg)))
        _manifest(out_dir, cfg, files, time.perf_counter() - t0, "synthesize")
        head = f"[{label}] " if label else ""
        for k, v in bundle.residuals.items():
            print(f"{head}{k:<20} {v:.3e}")
        print(f"{head}outputs written to {out_dir}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    runs = _load(args)
    multi = len(runs) > 1
    for label, cfg in runs:
        out_dir = os.path.join(args.out_dir, label) if multi else args.out_dir
        os.makedirs(out_dir, exist_ok=True)
        t0 = time.perf_counter()
        bundle = synthesis.synthesize(cfg.system, cfg.weights.Q, cfg.weights.R, P=cfg.weights.P)
        suite = build_controllers(cfg.system, cfg.weights, cfg.constraints, cfg.experiment,
                                  L=bundle.L, K_lqr=bundle.K)
        report = run_campaign(cfg.experiment, suite.controllers, cfg.system, cfg.weights, cfg.constraints,
                              bundle.L, parallel=args.parallel, strict=args.strict)
        files = write_report_csvs(report, out_dir)
        title = f"{label or cfg.source}: {cfg.experiment.num_trajectories} trajectories, " \
                f"{cfg.experiment.sim_steps} steps, seed {cfg.experiment.master_seed}"
        summary = format_summary(report, title)
        files.append(_write(os.path.join(out_dir, "summary.txt"), summary + "\n"))
        files.append(_write(os.path.join(out_dir, "config.toml"), cfgmod.resolved_toml(cfg)))
        _manifest(out_dir, cfg, files, time.perf_counter() - t0, "simulate")
        print(summary)
        print()
    return EXIT_OK


def cmd_verify(args) -> int:
    from .oracles import run_checks

    failed = 0
    for r in run_checks(samples=args.samples, n_qp=args.qp_problems, seed=args.seed or 0):
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<22} {r.detail}")
        failed += not r.passed
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iofsmpc", description=(
        "Output-feedback stochastic MPC: offline synthesis, Monte Carlo campaigns and self-checks."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML experiment file")
        sp.add_argument("--preset", choices=cfgmod.PRESETS, help="built-in experiment (default: all presets)")
        sp.add_argument("--out-dir", default="out", help="output directory (default: out)")
        sp.add_argument("--horizon", type=int, help="MPC prediction horizon N")
        sp.add_argument("--terminal", choices=sorted(TERMINAL_FLAGS), help="terminal constraint mode")
        sp.add_argument("--controllers", help=f"comma-separated subset of {','.join(CONTROLLER_NAMES)}")

    s = sub.add_parser("synthesize", help="compute gains, covariances, tightening and terminal sets")
    common(s)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("simulate", help="run a closed-loop Monte Carlo campaign")
    common(s)
    s.add_argument("--seed", type=int, help="master seed")
    s.add_argument("--trajectories", type=int, help="number of trajectories per controller")
    s.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes (default 1)")
    s.add_argument("--strict", action="store_true", help="abort on the first infeasible QP")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run the built-in oracle checks")
    s.add_argument("--samples", type=int, default=1_000_000, help="Monte Carlo samples for the calibration check")
    s.add_argument("--qp-problems", type=int, default=1000, help="random QPs for the brute-force comparison")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QpInfeasible as exc:
        ctx = dict(exc.context or {})
        dump = ctx.pop("qp", None)
        print(f"infeasible QP: {exc} {json.dumps(ctx)}", file=sys.stderr)
        out_dir = getattr(args, "out_dir", None)
        if dump and out_dir:
            os.makedirs(out_dir, exist_ok=True)
            path = _write(os.path.join(out_dir, "infeasible_qp.txt"), dump)
            print(f"problem dump written to {path}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SYNTHESIS_ERRORS as exc:
        print(f"synthesis error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_SYNTHESIS
    except IofSmpcError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
