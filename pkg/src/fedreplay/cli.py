"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .memory import dump_csv
from .runner import _run_experiment, emit_report, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedreplay",
        description="Simulate online federated class-incremental learning with replay memory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("config", help="path to the experiment config file")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="override the output directory")
    run.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    run.add_argument("--parallel", action="store_true", help="run client ticks in worker threads")

    grid = sub.add_parser("grid", help="run every config file in a directory")
    grid.add_argument("config_dir", help="directory of experiment config files")
    grid.add_argument("--seed", type=int, default=None, help="override every config's seed")
    grid.add_argument("--out", default=None, help="parent output directory (one subdir per config)")
    grid.add_argument("--force", action="store_true", help="overwrite non-empty output directories")
    grid.add_argument("--parallel", action="store_true", help="run client ticks in worker threads")

    dump = sub.add_parser("dump-memory", help="run a config and dump the final memory buffers")
    dump.add_argument("config", help="path to the experiment config file")
    dump.add_argument("--seed", type=int, default=None, help="override the config seed")
    dump.add_argument("--out", default=None, help="override the output directory")
    dump.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    return parser


def _load(path, seed_override):
    config = parse_config(path)
    if seed_override is not None:
        config.seed = seed_override
        config.validate()
    return config


def _cmd_run(args) -> int:
    config = _load(args.config, args.seed)
    result = run_experiment(config, parallel=args.parallel)
    out = args.out if args.out is not None else config.output_dir
    emit_report(result, out, force=args.force)
    print(
        f"A={result.avg_last_accuracy:.4f} F={result.avg_last_forgetting:.4f} "
        f"rounds={len(result.round_log)} seed={result.seed} out={out}"
    )
    return 0


def _cmd_grid(args) -> int:
    config_dir = Path(args.config_dir)
    files = sorted(p for p in config_dir.iterdir() if p.suffix in (".ini", ".cfg"))
    if not files:
        raise ConfigError(f"no .ini or .cfg config files in {config_dir}")
    parent = Path(args.out) if args.out is not None else Path("out")
    for path in files:
        config = _load(path, args.seed)
        result = run_experiment(config, parallel=args.parallel)
        out = parent / path.stem
        emit_report(result, out, force=args.force)
        print(f"{path.stem}: A={result.avg_last_accuracy:.4f} F={result.avg_last_forgetting:.4f}")
    return 0


def _cmd_dump_memory(args) -> int:
    config = _load(args.config, args.seed)
    result, workers = _run_experiment(config, parallel=False)
    out = Path(args.out if args.out is not None else config.output_dir)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f"output directory {out} is not empty (pass --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    for worker in workers:
        dump_csv(worker.buffer, out / f"memory_{worker.client_id}.csv")
    print(
        f"dumped {len(workers)} memory snapshots to {out} "
        f"(total stored: {sum(len(w.buffer) for w in workers)})"
    )
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "grid":
            return _cmd_grid(args)
        return _cmd_dump_memory(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surface as runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
