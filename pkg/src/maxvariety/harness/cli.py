"""Command-line entry point: ``maxvariety run|validate|report|sweep``."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .report import FORMATS, emit_report, load_report
from .runner import run_scenario

EXIT_OK, EXIT_FLAGS_FAILED, EXIT_CONFIG = 0, 1, 2


def _load(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return None
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return None


def _run(args, parallel):
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_CONFIG
    report = run_scenario(cfg, args.output_root, parallel=parallel)
    for flag in report.flags:
        print(f"{flag.status.upper():7s} {flag.name}: {flag.value} (threshold {flag.threshold})")
    if report.failure:
        print(f"failure: {report.failure}", file=sys.stderr)
    print(f"outputs: {report.timing.get('directory')}")
    return EXIT_OK if report.passed else EXIT_FLAGS_FAILED


def cmd_run(args):
    return _run(args, 1)


def cmd_sweep(args):
    if args.parallel < 1:
        print("--parallel must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return _run(args, args.parallel)


def cmd_validate(args):
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_CONFIG
    print(f"ok: {cfg.scenario} config, hash {cfg.hash[:12]}")
    return EXIT_OK


def cmd_report(args):
    try:
        report = load_report(args.run_dir)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in emit_report(report, args.format, args.out or args.run_dir):
        print(path)
    return EXIT_OK if report.passed else EXIT_FLAGS_FAILED


def build_parser():
    parser = argparse.ArgumentParser(prog="maxvariety", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario config")
    run.add_argument("config")
    run.add_argument("--output-root", default=None,
                     help="parent directory for run outputs (default $MAXVARIETY_OUTPUT_ROOT or ./runs)")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a scenario with its cells in a process pool")
    sweep.add_argument("config")
    sweep.add_argument("--parallel", type=int, default=2)
    sweep.add_argument("--output-root", default=None)
    sweep.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    rep = sub.add_parser("report", help="re-emit a stored report")
    rep.add_argument("run_dir")
    rep.add_argument("--format", choices=FORMATS, default="markdown")
    rep.add_argument("--out", default=None, help="directory to write into (default: the run dir)")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
