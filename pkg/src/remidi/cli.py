"""Command-line entry point: ``remidi run`` and ``remidi verify``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .core import BudgetExceeded
from .experiments import RunResult, Table, run_experiment
from .verify import run_suite

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("remidi")


def format_value(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "" if x is None else str(x)


def table_to_csv(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _versions() -> dict[str, str]:
    import scipy

    return {"remidi": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def write_artifacts(out: Path, cfg: ExperimentConfig, seed: int, result: RunResult, wall_time: float) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in result.tables.items():
        path = out / f"{name}.csv"
        path.write_text(table_to_csv(table))
        written.append(path)
    manifest = {
        "experiment": cfg.experiment,
        "config_sha256": cfg.digest(),
        "config": cfg.model_dump(mode="json"),
        "seed": seed,
        "versions": _versions(),
        "wall_time_seconds": round(wall_time, 3),
        "artifacts": sorted(p.name for p in written),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(_jsonable(result.summary), indent=2, sort_keys=True) + "\n")
    return written


def _with_log_every(cfg: ExperimentConfig, log_every: int | None) -> ExperimentConfig:
    if log_every is None:
        return cfg
    if log_every < 1:
        raise ConfigError("logging.interval: --log-every must be a positive integer")
    return cfg.model_copy(update={"logging": cfg.logging.model_copy(update={"interval": log_every})})


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = _with_log_every(load_config(args.config), args.log_every)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("config error: --threads must be a positive integer", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        result = run_experiment(cfg, args.seed, threads=args.threads)
    except BudgetExceeded as err:
        print(f"budget exceeded: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError, ArithmeticError) as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    wall = time.perf_counter() - start
    written = write_artifacts(Path(args.out), cfg, args.seed, result, wall)
    log.info("wrote %s in %.2fs", ", ".join(str(p) for p in written), wall)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    s = cfg.solver
    try:
        checks = run_suite(s.suite, instances=s.random_instances, tol=s.tolerance)
    except BudgetExceeded as err:
        print(f"budget exceeded: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="remidi", description="Minimax-regret refinement experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write CSV, manifest and summary")
    run.add_argument("--config", required=True, help="experiment config (JSON)")
    run.add_argument("--seed", required=True, type=int)
    run.add_argument("--out", default="./out", help="artifact directory (default ./out)")
    run.add_argument("--log-every", type=int, default=None, help="override logging.interval")
    run.add_argument("--threads", type=int, default=1, help="worker threads for evaluation")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run fixture and property checks")
    ver.add_argument("--config", required=True, help="config whose solver.suite names the checks")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
