"""Command-line entry point: ``riscf run | channels | selftest``."""

import argparse
import logging
import sys

from .experiment import ExperimentConfig, run_experiment
from .kvconfig import load_kv
from .scenario import build_scenario, dump_channels
from .selftest import run_selftest


def _cmd_run(args):
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seeds = list(args.seed)
    if args.timing:
        config.timing = True
    out = args.out or config.output
    rows = run_experiment(config, threads=args.threads, output=out)
    failed = [r for r in rows if not r.ok]
    print(f"{len(rows)} rows, {len(failed)} failed" + (f", written to {out}" if out else ""))
    for r in failed:
        print(f"  {r.scheme} {r.axis}={r.axis_value} seed={r.seed}: {r.status}", file=sys.stderr)
    return 0 if not failed else 1


def _cmd_channels(args):
    config = load_kv(args.config) if args.config else {}
    seed = args.seed[0] if args.seed else None
    scn, channels = build_scenario(config, seed=seed)
    dump_channels(channels, args.out)
    print(f"wrote channels (B={scn.B}, K={scn.K}, R={scn.R}, seed={scn.seed}) to {args.out}")
    return 0


def _cmd_selftest(args):
    seed = args.seed[0] if args.seed else 0
    results = run_selftest(seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="riscf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, action="append",
                        help="seed (repeat to sweep several); overrides the config")
    common.add_argument("--threads", type=int, default=1, help="rows run concurrently")

    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="CSV output path (overrides the config)")
    p.add_argument("--timing", action="store_true", help="record wall time per row")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("channels", parents=[common], help="dump one channel realization")
    p.add_argument("--config", help="scenario config (key = value)")
    p.add_argument("--out", required=True, help=".npz or .csv path")
    p.set_defaults(func=_cmd_channels)

    p = sub.add_parser("selftest", parents=[common], help="run fast invariant checks")
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"riscf: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
