"""Command-line entry point: ``ubsde run``, ``ubsde verify`` and ``ubsde presets``."""
from __future__ import annotations

import argparse
import sys

from .drivers import DRIVER_PRESETS, TERMINAL_PRESETS
from .scenario import EXIT_CONFIG, SCENARIO_PRESETS, run_scenario
from .suites import SUITES, run_verification_suite


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="ubsde", description="Uncertain backward SDE solver")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario from a config file or a preset name")
    run.add_argument("config", help="path to a key = value config file, or a preset name")
    run.add_argument("--out", default="ubsde_out", help="output directory (default: ubsde_out)")
    run.add_argument("--seed", type=_u64, default=None, help="override ensemble.seed")
    run.add_argument("--threads", type=int, default=1,
                     help="worker threads for path generation (UBSDE_THREADS overrides)")
    run.add_argument("--no-timing", action="store_true",
                     help="write runtime_ms as null so manifests are byte-identical across runs")
    run.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", help=f"one of: {', '.join(SUITES)}")
    ver.add_argument("--quick", action="store_true", help="smaller ensembles")

    sub.add_parser("presets", help="list built-in scenarios, drivers and terminal conditions")
    return p


def list_presets(out=None):
    out = out or sys.stdout
    print("scenarios:", file=out)
    for name, (desc, _) in SCENARIO_PRESETS.items():
        print(f"  {name:22s} {desc}", file=out)
    print("drivers:", file=out)
    for name, (_, desc) in DRIVER_PRESETS.items():
        print(f"  {name:22s} {desc}", file=out)
    print("terminal conditions:", file=out)
    for name in TERMINAL_PRESETS:
        print(f"  {name}", file=out)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; keep 2 for non-convergence
        return EXIT_CONFIG if exc.code else 0
    if args.command == "run":
        code, _ = run_scenario(args.config, out_dir=args.out, seed=args.seed, threads=args.threads,
                               timing=not args.no_timing, plots=False if args.no_plots else None)
        return code
    if args.command == "verify":
        return run_verification_suite(args.suite, quick=args.quick)
    list_presets()
    return 0


if __name__ == "__main__":
    sys.exit(main())
