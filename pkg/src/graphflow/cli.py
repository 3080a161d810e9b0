"""Command line entry point: ``graphflow run|suite|check``."""
from __future__ import annotations

import argparse
import json
import sys

from .config import EXPERIMENTS, load_config, preset
from .errors import GraphFlowError, ParseError, ValidationError
from .experiments import EXIT_ASSERT, EXIT_CONFIG, EXIT_PASS, run_experiment
from .identities import identity_suite


def _config_failure(exc):
    record = {"status": "config_error", "exit_code": EXIT_CONFIG, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ParseError):
        record.update(line=exc.line, key=exc.key)
    elif isinstance(exc, ValidationError):
        record.update(key=exc.key, reason=exc.reason)
    print(json.dumps(record), file=sys.stderr)
    return EXIT_CONFIG


def _report(code, summary):
    for name, c in summary.get("assertions", {}).items():
        mark = "PASS" if c["passed"] else "FAIL"
        print(f"{mark} {name}: value={c['value']:.6g} threshold={c['threshold']:.6g}")
    if "failure" in summary:
        print(f"failure: {summary['failure']}", file=sys.stderr)
    print(f"{summary['experiment']}: {summary['status']} (exit {code}) -> {summary['output_directory']}")
    return code


def _run(cfg, output_root):
    return _report(*run_experiment(cfg, output_root))


def cmd_run(args):
    try:
        cfg = load_config(args.config)
    except (ParseError, ValidationError) as exc:
        return _config_failure(exc)
    return _run(cfg, args.output_root)


def cmd_suite(args):
    try:
        cfg = preset(args.name)
    except ValidationError as exc:
        return _config_failure(exc)
    return _run(cfg, args.output_root)


def cmd_check(args):
    checks = identity_suite()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: value={c.value:.6g} threshold={c.threshold:.6g}")
    return EXIT_PASS if all(c.passed for c in checks) else EXIT_ASSERT


def build_parser():
    parser = argparse.ArgumentParser(prog="graphflow", description="Graph flows with a prescribed contact angle.")
    parser.add_argument("--output-root", default=None, help="directory for run artifacts (default: $GRAPHFLOW_OUTPUT_ROOT or ./runs)")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment from a YAML config")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("suite", help="run a named preset")
    p.add_argument("name", help=", ".join(EXPERIMENTS))
    p.set_defaults(func=cmd_suite)
    p = sub.add_parser("check", help="run the geometric identity checks")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GraphFlowError as exc:
        return _config_failure(exc)


if __name__ == "__main__":
    sys.exit(main())
