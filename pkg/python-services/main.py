"""
Main entry point for the KG-NSF toolkit.
Subcommands: train, eval, sweep, stats.

Usage:
    python main.py train --train train.txt --valid valid.txt --test test.txt \\
        --model nsf-distmult --dim 500 --lr 0.0001 --batch-size 500
    python main.py eval --checkpoint runs/x/best.kgnsf --train ... --split test --filtered
    python main.py sweep --grid grid.txt --jobs 4 -- --train ... --model nsf-transe
    python main.py stats --train ... --valid ... --test ... --preset wn18
"""

import argparse
import sys
from typing import List, Optional

from loguru import logger
from pydantic import ValidationError

from cli.commands import (
    DATASET_PRESETS,
    EXIT_ERROR,
    EXIT_USAGE,
    UsageError,
    cmd_eval,
    cmd_stats,
    cmd_train,
)
from cli.sweep import cmd_sweep
from shared import __version__
from shared.config import configure_logging, get_settings
from shared.errors import KGNSFError


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--train", required=True, help="Training split (tab-separated h r t)")
    parser.add_argument("--valid", required=True, help="Validation split")
    parser.add_argument("--test", required=True, help="Test split")


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog="kgnsf",
        description="Negative-sampling-free knowledge graph embedding",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override KGNSF_LOG_LEVEL")
    parser.add_argument("--log-json", action="store_true", default=None, help="Serialized JSON log records")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # train
    train = subparsers.add_parser("train", help="Train a model")
    _add_data_flags(train)
    train.add_argument("--model", required=True, choices=["nsf-transe", "nsf-distmult", "transe", "distmult"])
    train.add_argument("--dim", required=True, type=int)
    train.add_argument("--lr", required=True, type=float)
    train.add_argument("--batch-size", required=True, type=int)
    train.add_argument("--norm", choices=["l1", "l2"], default=None, help="TransE distance (default l2)")
    train.add_argument("--sdbn", nargs="?", type=int, const=settings.sdbn_group_size, default=None,
                       metavar="GROUP_SIZE", help="Shuffled-DBN on the loss inputs")
    train.add_argument("--loss", choices=["bt", "hsic"], default=None)
    train.add_argument("--alpha", type=float, default=None, help="Weight of L(H|, T) (default 0.5)")
    train.add_argument("--lambda", dest="lambda_", type=float, default=None, help="Redundancy weight (default 1/d)")
    train.add_argument("--extended-terms", action="store_true", help="Add L(H, T) - L(R, H - T)")
    train.add_argument("--loss-from", choices=["transe", "distmult"], default=None,
                       help="Decomposition used for the training loss")
    train.add_argument("--margin", type=float, default=None, help="Margin for the TransE baseline")
    train.add_argument("--n-neg", type=int, default=None, help="Negatives per positive")
    train.add_argument("--neg-filter", choices=["train", "all"], default=None)
    train.add_argument("--normalize-entities", action="store_true")
    train.add_argument("--init-bound", type=float, default=None,
                       help="Half-width of the uniform init (default 1/d for NSF, 6/sqrt(d) otherwise)")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--max-epochs", type=int, default=200)
    train.add_argument("--patience", type=int, default=5)
    train.add_argument("--eval-every", type=int, default=1)
    train.add_argument("--run-dir", default=None)
    train.add_argument("--force", action="store_true", help="Reuse a non-empty run directory")
    train.add_argument("--no-wall-time", action="store_true", help="Record 0.0 wall time per epoch")
    train.add_argument("--workers", type=int, default=None, help="Evaluation threads")
    train.set_defaults(func=cmd_train)

    # eval
    evaluate = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    _add_data_flags(evaluate)
    evaluate.add_argument("--split", choices=["valid", "test"], default="test")
    mode = evaluate.add_mutually_exclusive_group()
    mode.add_argument("--raw", action="store_true")
    mode.add_argument("--filtered", action="store_true", help="Default")
    evaluate.add_argument("--run-dir", default=None, help="Report directory (default: the checkpoint's)")
    evaluate.add_argument("--workers", type=int, default=None)
    evaluate.set_defaults(func=cmd_eval)

    # sweep
    sweep = subparsers.add_parser("sweep", help="Run a hyperparameter grid")
    sweep.add_argument("--grid", required=True, help="File of flag=v1,v2,... lines")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--sweep-dir", default=None)
    sweep.add_argument("base_args", nargs=argparse.REMAINDER, help="Flags passed to every run (after --)")
    sweep.set_defaults(func=cmd_sweep)

    # stats
    stats = subparsers.add_parser("stats", help="Print dataset statistics")
    _add_data_flags(stats)
    stats.add_argument("--check", default=None, metavar="E,R,TR,VA,TE")
    stats.add_argument("--preset", choices=sorted(DATASET_PRESETS), default=None)
    stats.set_defaults(func=cmd_stats)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_json)

    try:
        return args.func(args)
    except (UsageError, ValidationError) as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (KGNSFError, OSError) as e:
        logger.error(str(e))
        return EXIT_ERROR


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\nOperation cancelled by user.")
        sys.exit(1)
