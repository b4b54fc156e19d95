"""Command-line entry point: ``gwpk run | list | inspect``.

Exit codes: 0 all checks passed, 1 invariant failure, 2 invalid config or
input, 3 numerical failure.  Failures also write a machine-readable error
record (``error.json`` in the output directory and one JSON line on stderr).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io, scenarios
from .errors import ConfigError, HypothesisError, WeightOverflowError

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def classify(exc: BaseException) -> int:
    """Exit code for an exception raised while running a task."""
    if isinstance(exc, (ConfigError, WeightOverflowError)):
        return EXIT_CONFIG
    if isinstance(exc, HypothesisError):
        return EXIT_INVARIANT
    return EXIT_NUMERICAL


def _fail(exc: BaseException, code: int, out: Path | None) -> int:
    rec = scenarios.error_record(exc, code)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            io.write_json(out / "error.json", rec)
        except OSError:
            pass
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        cfg = scenarios.load_config(args.config)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG, Path(args.output) if args.output else None)
    out = Path(args.output) if args.output else cfg.output
    if args.task != "full-report" and args.task not in scenarios.TASKS:
        return _fail(ConfigError(f"unknown task {args.task!r}"), EXIT_CONFIG, out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.task == "full-report":
            record, code = scenarios.run_full_report(cfg, out, classify)
        else:
            res = scenarios.run_task(args.task, cfg, out)
            record, code = res.record(cfg), (EXIT_OK if res.passed else EXIT_INVARIANT)
    except (ArithmeticError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(exc, classify(exc), out)
    record["config"] = cfg.raw
    io.write_json(out / "metrics.json", record)
    if code == EXIT_INVARIANT and args.task != "full-report":
        failed = sorted(k for k, v in record["checks"].items() if not v)
        io.write_json(out / "error.json", {"exit_code": code, "category": "invariant", "failed_checks": failed})
    print(f"{args.task}: {'passed' if code == EXIT_OK else 'failed'} (exit {code}) -> {out / 'metrics.json'}")
    return code


def cmd_list(args) -> int:
    for name, desc in scenarios.list_scenarios(args.filter or ""):
        print(f"{name}\t{desc}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.artifact)
    try:
        arr = io.read_array(path)
    except (OSError, io.ContainerError) as exc:
        return _fail(exc, EXIT_CONFIG, None)
    summary = {
        "path": str(path),
        "shape": list(arr.shape),
        "dtype": str(arr.dtype),
        "finite": bool(np.all(np.isfinite(arr))),
        "max_abs": float(np.max(np.abs(arr))) if arr.size else 0.0,
        "meta": io.read_meta(path),
    }
    print(io.dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwpk", description="Wave-packet propagation scenarios.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a task on a scenario config")
    r.add_argument("task", help="one of: " + ", ".join([*scenarios.TASKS, "full-report"]))
    r.add_argument("--config", required=True, help="JSON config file or inline JSON object")
    r.add_argument("--output", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)
    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.add_argument("filter", nargs="?", default="", help="substring filter")
    ls.set_defaults(func=cmd_list)
    ins = sub.add_parser("inspect", help="summarize a GWPK1 artifact")
    ins.add_argument("artifact")
    ins.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
