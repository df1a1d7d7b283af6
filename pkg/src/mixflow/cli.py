"""Command-line interface.

    mixflow run <config> [--out DIR] [--vtk]
    mixflow verify <config> [--allow-drift]
    mixflow converge <config> --study NAME --levels 64,128,256

The MIXFLOW_OUT environment variable overrides the default output
directory of ``run``.  Exit codes: 0 success, 2 configuration error,
3 solver failure, 4 verification failure.  Failures print a single
machine-readable line ``error: {json}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import io as mio
from .config import load_config
from .coupled import run
from .errors import ConfigError, SolverError
from .studies import run_study
from .verify import verify_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


def _fail(code: int, kind: str, message: str) -> int:
    print("error: " + json.dumps({"code": code, "kind": kind, "message": message}),
          file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
        problem, rho0 = config.build_problem()
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", "; ".join(str(a) for a in e.args[0])
                     if e.args and isinstance(e.args[0], list) else str(e))
    out_dir = os.environ.get("MIXFLOW_OUT") or args.out or "mixflow_out"
    mio.ensure_dir(out_dir)
    ts = config.time_spec()

    def snapshot(step, state):
        mio.write_fields_csv(os.path.join(out_dir, mio.snapshot_name(step)), state)
        if args.vtk:
            mio.write_vtk(os.path.join(out_dir, f"fields_{step:06d}.vtk"), state)

    try:
        state, log = run(
            problem, rho0, ts["t_end"], ts["dt"], dt_min=ts["dt_min"],
            output_every=ts["output_every"], on_snapshot=snapshot,
            stepper=config["solver.stepper"],
        )
    except SolverError as e:
        return _fail(EXIT_SOLVER, "solver", str(e))
    mio.write_diagnostics_csv(
        os.path.join(out_dir, "diagnostics.csv"), log, problem.model.n_species
    )
    print(f"run finished: t={state.t:.17g}, {len(log)} steps, output in {out_dir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        config = load_config(args.config)
        checks = verify_config(config, allow_drift=args.allow_drift)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", "; ".join(str(a) for a in e.args[0])
                     if e.args and isinstance(e.args[0], list) else str(e))
    except SolverError as e:
        return _fail(EXIT_SOLVER, "solver", str(e))
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    if failed:
        return _fail(EXIT_VERIFY, "verify", f"{len(failed)} of {len(checks)} checks failed")
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


def cmd_converge(args) -> int:
    try:
        levels = [int(x) for x in args.levels.split(",") if x.strip()]
        if len(levels) < 2:
            raise ValueError("need at least two levels")
    except ValueError as e:
        return _fail(EXIT_CONFIG, "config", f"--levels: {e}")
    try:
        config = load_config(args.config)
        study = args.study or config.get("study.kind")
        if not study:
            return _fail(EXIT_CONFIG, "config", "no study selected (--study or study.kind)")
        result = run_study(config, study, levels)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", "; ".join(str(a) for a in e.args[0])
                     if e.args and isinstance(e.args[0], list) else str(e))
    except SolverError as e:
        return _fail(EXIT_SOLVER, "solver", str(e))
    print(result.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixflow", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run a simulation and write CSV output")
    pr.add_argument("config")
    pr.add_argument("--out", default=None,
                    help="output directory (the MIXFLOW_OUT environment variable "
                         "takes precedence)")
    pr.add_argument("--vtk", action="store_true", help="also write legacy ASCII VTK snapshots")
    pr.set_defaults(func=cmd_run)

    pv = sub.add_parser("verify", help="run the invariant suite for a configuration")
    pv.add_argument("config")
    pv.add_argument("--allow-drift", action="store_true",
                    help="report the L(u)=1 check informationally when the "
                         "constraint mode is off")
    pv.set_defaults(func=cmd_verify)

    pc = sub.add_parser("converge", help="run a refinement study")
    pc.add_argument("config")
    pc.add_argument("--study", default=None, choices=["barenblatt", "oracle_compare", "translation"])
    pc.add_argument("--levels", required=True, help="comma-separated cell counts, e.g. 64,128,256")
    pc.set_defaults(func=cmd_converge)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
