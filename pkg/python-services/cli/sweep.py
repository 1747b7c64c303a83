"""
Sweep Runner - cartesian hyperparameter grids over child `train` processes
Each combination gets its own run directory; results are collected into sweep_summary.csv
"""

import argparse
import csv
import itertools
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from loguru import logger

from cli.commands import EXIT_ERROR, EXIT_OK, UsageError
from shared.config import get_settings
from shared.run_logger import RunLogger

MAIN_SCRIPT = Path(__file__).resolve().parent.parent / "main.py"

SUMMARY_NAME = "sweep_summary.csv"
SUMMARY_COLUMNS = (
    "run_dir", "model", "dim", "lr", "batch", "alpha", "loss", "sdbn",
    "val_mrr_filt", "test_mrr_filt", "epochs_to_best",
)
# Summary column -> train flag
COLUMN_FLAGS = {
    "model": "model",
    "dim": "dim",
    "lr": "lr",
    "batch": "batch-size",
    "alpha": "alpha",
    "loss": "loss",
    "sdbn": "sdbn",
}

TRUE_VALUES = ("true", "on", "yes")
FALSE_VALUES = ("false", "off", "no")


@dataclass
class SweepRun:
    """One grid combination and, once finished, its outcome"""

    index: int
    run_dir: Path
    flags: Dict[str, str]
    returncode: Optional[int] = None
    val_mrr: Optional[float] = None
    test_mrr: Optional[float] = None
    best_epoch: Optional[int] = None

    @property
    def succeeded(self) -> bool:
        return self.returncode == 0


def parse_grid(path: str) -> Dict[str, List[str]]:
    """
    Read a grid file of `flag=v1,v2,...` lines.

    Blank lines and `#` comments are ignored; a leading `--` on the flag is optional.

    Raises:
        UsageError: On a malformed line or an empty grid
    """
    grid: Dict[str, List[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_number}: expected flag=v1,v2,... got {line!r}")
            flag, values = line.split("=", 1)
            flag = flag.strip().lstrip("-")
            choices = [v.strip() for v in values.split(",") if v.strip()]
            if not flag or not choices:
                raise UsageError(f"{path}:{line_number}: empty flag or value list")
            grid[flag] = choices
    if not grid:
        raise UsageError(f"Grid file {path} defines no flags")
    return grid


def expand_grid(grid: Dict[str, List[str]]) -> List[Dict[str, str]]:
    """Cartesian product of the grid, in file order (last flag varies fastest)."""
    flags = list(grid)
    return [dict(zip(flags, values)) for values in itertools.product(*(grid[f] for f in flags))]


def flags_to_argv(flags: Dict[str, str]) -> List[str]:
    """`true`/`on` become bare switches; `false`/`off` drop the flag."""
    argv: List[str] = []
    for flag, value in flags.items():
        lowered = value.lower()
        if lowered in FALSE_VALUES:
            continue
        argv.append(f"--{flag}")
        if lowered not in TRUE_VALUES:
            argv.append(value)
    return argv


def _base_flags(base_args: Sequence[str]) -> Dict[str, str]:
    """Flag/value pairs from the pass-through arguments (used to fill summary columns)."""
    flags: Dict[str, str] = {}
    tokens = list(base_args)
    for i, token in enumerate(tokens):
        if token.startswith("--"):
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            flags[token[2:]] = "true" if nxt is None or nxt.startswith("--") else nxt
    return flags


def run_child(run: SweepRun, base_args: Sequence[str]) -> SweepRun:
    """Run one `train` child process and collect its metrics."""
    command = [
        sys.executable, str(MAIN_SCRIPT), "train",
        *base_args, *flags_to_argv(run.flags),
        "--run-dir", str(run.run_dir), "--force",
    ]
    logger.info(f"[run {run.index}] {' '.join(command[2:])}")
    completed = subprocess.run(command, capture_output=True, text=True)
    run.returncode = completed.returncode

    if not run.succeeded:
        tail = (completed.stderr or "").strip().splitlines()[-3:]
        logger.error(f"[run {run.index}] failed with exit {run.returncode}: {' | '.join(tail)}")
        return run

    run_logger = RunLogger(run.run_dir, create=False)
    best = run_logger.best_record()
    if best is not None:
        run.val_mrr = best.val_mrr_filtered
        run.best_epoch = best.epoch
    test_report = run.run_dir / "eval_test_filt.json"
    if test_report.exists():
        run.test_mrr = run_logger.read_json(test_report).get("mrr")
    logger.success(f"[run {run.index}] done: val_mrr_filt={run.val_mrr}")
    return run


def summary_rows(runs: Sequence[SweepRun], base_args: Sequence[str]) -> List[Dict[str, object]]:
    """Rows sorted by validation filtered MRR (descending); failed runs last with empty metrics."""
    base = _base_flags(base_args)
    finished = sorted(
        (r for r in runs if r.succeeded and r.val_mrr is not None),
        key=lambda r: (-r.val_mrr, r.index),
    )
    rest = [r for r in runs if r not in finished]

    rows = []
    for run in finished + rest:
        merged = {**base, **run.flags}
        row: Dict[str, object] = {"run_dir": str(run.run_dir)}
        for column, flag in COLUMN_FLAGS.items():
            row[column] = merged.get(flag, "")
        row["val_mrr_filt"] = "" if run.val_mrr is None else run.val_mrr
        row["test_mrr_filt"] = "" if run.test_mrr is None else run.test_mrr
        row["epochs_to_best"] = "" if run.best_epoch is None else run.best_epoch
        rows.append(row)
    return rows


def write_summary(path: Path, rows: Sequence[Dict[str, object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def cmd_sweep(args: argparse.Namespace) -> int:
    """
    Expand the grid, run every combination with at most `--jobs` concurrent children,
    and write sweep_summary.csv.

    Returns:
        0 if at least one run succeeded, 1 if all failed
    """
    base_args = list(args.base_args or [])
    if base_args and base_args[0] == "--":
        base_args = base_args[1:]
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")

    combos = expand_grid(parse_grid(args.grid))
    sweep_dir = Path(args.sweep_dir) if args.sweep_dir else Path(get_settings().runs_dir) / "sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    runs = [SweepRun(index=i, run_dir=sweep_dir / f"run_{i:03d}", flags=flags) for i, flags in enumerate(combos)]
    logger.info(f"Sweep: {len(runs)} runs, {args.jobs} in parallel, into {sweep_dir}")

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        runs = list(pool.map(lambda run: run_child(run, base_args), runs))

    summary_path = sweep_dir / SUMMARY_NAME
    write_summary(summary_path, summary_rows(runs, base_args))

    failed = [r for r in runs if not r.succeeded]
    if failed:
        logger.warning(f"{len(failed)} of {len(runs)} runs failed: {', '.join(str(r.run_dir) for r in failed)}")
    logger.success(f"Summary written to {summary_path}")
    return EXIT_ERROR if len(failed) == len(runs) else EXIT_OK
