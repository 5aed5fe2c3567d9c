"""Command line entry point.

Exit codes: 0 ok, 1 an invariant gate failed, 2 configuration error,
3 numerical failure (folded map, failed inverse, vacuum, out of domain).
"""
from __future__ import annotations

import argparse
import os
import sys

from .errors import (ConfigError, ConstructionError, FoldingError, InverseError, OutOfDomain,
                     VacuumError)
from .runner import EXIT_CONFIG, EXIT_NUMERIC, diagnose_snapshot, run_scenario
from .scenario import load_scenario

ENV_OUT = "LAGMEDIA_OUT"
ENV_THREADS = "LAGMEDIA_THREADS"

# subcommand -> scenario modules it accepts
_MODULES = {
    "simulate": ("fluid", "gravity", "plasma", "c2"),
    "static-solve": ("static-solve",),
    "bound-check": ("bound-check",),
    "plasma": ("plasma",),
    "c2": ("c2",),
}


def _u64(text):
    val = int(text, 0)
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _positive(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return val


def build_parser():
    parser = argparse.ArgumentParser(prog="lagmedia",
                                     description="Lagrangian continuous-media simulations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _MODULES:
        p = sub.add_parser(name, help=f"run a {name} scenario")
        p.add_argument("--scenario", required=True, help="YAML scenario file")
        p.add_argument("--out", help=f"output directory (overrides ${ENV_OUT} and the scenario)")
        p.add_argument("--threads", type=_positive, help=f"worker threads (overrides ${ENV_THREADS})")
        p.add_argument("--seed", type=_u64, help="RNG seed (overrides the scenario)")
    p = sub.add_parser("diagnose", help="diagnostics of a saved flow-map snapshot")
    p.add_argument("snapshot", help="CSV or binary snapshot")
    p.add_argument("--out", help="output directory")
    p = sub.add_parser("plotdata", help="long-format plot data from a diagnostics CSV")
    p.add_argument("diagnostics", help="diagnostics CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--columns", help="comma-separated column names (default: all)")
    p.add_argument("--scale", type=float, default=1.0, help="factor applied to every value")
    return parser


def _resolve(args):
    out = args.out or os.environ.get(ENV_OUT)
    threads = args.threads
    if threads is None and os.environ.get(ENV_THREADS):
        try:
            threads = _positive(os.environ[ENV_THREADS])
        except (ValueError, argparse.ArgumentTypeError) as err:
            raise ConfigError(f"{ENV_THREADS}: {err}") from err
    return out, threads


def _run(args):
    if args.command == "diagnose":
        out = args.out or os.environ.get(ENV_OUT) or "."
        path = diagnose_snapshot(args.snapshot, os.path.join(out, "snapshot_diagnostics.csv"))
        print(path)
        return 0
    if args.command == "plotdata":
        from .io import emit_plotdata
        cols = None if args.columns is None else [c.strip() for c in args.columns.split(",")]
        print(emit_plotdata(args.diagnostics, args.out, cols, args.scale))
        return 0
    sc = load_scenario(args.scenario)
    if sc.module not in _MODULES[args.command]:
        raise ConfigError(f"{args.scenario}: field 'module': {sc.module!r} cannot run under "
                          f"'{args.command}' (expected one of {', '.join(_MODULES[args.command])})")
    out, threads = _resolve(args)
    result = run_scenario(sc, out, threads, args.seed)
    for g in result.gates:
        flag = "PASS" if g["pass"] else "FAIL"
        print(f"{flag} {g['name']}: {g['value']:.3e} (tolerance {g['tolerance']:.3e})")
    print(f"artifacts in {result.out_dir}")
    return result.status


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, ConstructionError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FoldingError, InverseError, OutOfDomain, VacuumError) as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
