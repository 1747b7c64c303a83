"""
Command implementations for the `train`, `eval` and `stats` subcommands.
Each returns a process exit code.
"""

import argparse
from pathlib import Path
from typing import Dict, Optional, Tuple

from loguru import logger
from embedding_model.service import init_model, load_checkpoint, save_checkpoint
from evaluation.service import evaluate, evaluate_both
from kg_data.service import load_knowledge_graph, stats
from shared import __version__
from shared.config import get_settings, log_configuration
from shared.errors import KGNSFError
from shared.models import (
    LossConfig,
    LossKind,
    ModelKind,
    RunManifest,
    SDBNConfig,
    TrainConfig,
    TrainingObjective,
)
from shared.run_logger import RunLogger
from shared.validators import get_validation_summary, validate_knowledge_graph
from training.service import train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISMATCH = 3

# Dataset statistics: (entities, relations, train, valid, test)
DATASET_PRESETS: Dict[str, Tuple[int, int, int, int, int]] = {
    "fb15k": (14951, 1345, 483142, 50000, 59071),
    "wn18": (40943, 18, 141442, 5000, 5000),
    "fb15k237am": (14505, 237, 272115, 17526, 20438),
    "wn18am": (40559, 11, 86835, 2824, 2924),
}

NSF_ONLY_FLAGS = ("sdbn", "loss", "alpha", "lambda_", "extended_terms", "loss_from")
BASELINE_ONLY_FLAGS = ("n_neg", "margin", "neg_filter", "normalize_entities")


class UsageError(Exception):
    """Invalid flag combination (exit code 2)"""


def _given(args: argparse.Namespace, name: str) -> bool:
    value = getattr(args, name, None)
    return value not in (None, False)


def resolve_model(args: argparse.Namespace) -> Tuple[ModelKind, TrainingObjective]:
    """Map --model/--norm to a score-function kind and training objective."""
    nsf = args.model.startswith("nsf-")
    family = args.model[4:] if nsf else args.model
    if family == "distmult":
        if args.norm is not None:
            raise UsageError("--norm only applies to TransE models")
        kind = ModelKind.DISTMULT
    else:
        kind = ModelKind.TRANSE_L1 if args.norm == "l1" else ModelKind.TRANSE_L2
    return kind, TrainingObjective.NSF if nsf else TrainingObjective.NEGATIVE_SAMPLING


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    """
    Validate flag combinations and build the TrainConfig.

    Raises:
        UsageError: Flags that do not apply to the chosen model family
        pydantic.ValidationError: Out-of-range values
    """
    kind, objective = resolve_model(args)
    misplaced = BASELINE_ONLY_FLAGS if objective is TrainingObjective.NSF else NSF_ONLY_FLAGS
    for name in misplaced:
        if _given(args, name):
            flag = "--" + name.rstrip("_").replace("_", "-")
            raise UsageError(f"{flag} cannot be used with --model {args.model}")

    loss = LossConfig(
        lambda_=args.lambda_,
        alpha=0.5 if args.alpha is None else args.alpha,
        kind=LossKind(args.loss or "bt"),
        extended_terms=args.extended_terms,
    )
    settings = get_settings()
    return TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        seed=settings.default_seed if args.seed is None else args.seed,
        eval_every=args.eval_every,
        objective=objective,
        loss=loss,
        sdbn=SDBNConfig(group_size=args.sdbn) if args.sdbn is not None else None,
        loss_from=args.loss_from,
        n_negatives=args.n_neg or 1,
        margin=1.0 if args.margin is None else args.margin,
        neg_filter=args.neg_filter or "all",
        normalize_entities=args.normalize_entities,
        init_bound=args.init_bound,
    )


def default_run_dir(args: argparse.Namespace) -> Path:
    name = f"{args.model}_d{args.dim}_lr{args.lr}_b{args.batch_size}_s{args.seed or 0}"
    return Path(get_settings().runs_dir) / name


def _flags_dict(args: argparse.Namespace) -> Dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def cmd_train(args: argparse.Namespace) -> int:
    """Train a model, writing manifest, metrics.jsonl, best checkpoint and test reports."""
    config = build_train_config(args)
    kind, _ = resolve_model(args)

    log_configuration()
    # The run directory is only created once the data has loaded and validated
    kg = load_knowledge_graph(args.train, args.valid, args.test)
    validation = validate_knowledge_graph(kg)
    for warning in validation.warnings:
        logger.warning(warning)
    logger.info(get_validation_summary(validation))
    if not validation.is_valid:
        raise KGNSFError("; ".join(validation.errors))

    run_dir = Path(args.run_dir) if args.run_dir else default_run_dir(args)
    run_logger = RunLogger(run_dir, force=args.force)
    sink_id = logger.add(run_dir / "train.log", level="DEBUG")

    try:
        manifest = RunManifest(
            config={"flags": _flags_dict(args), "train_config": config.model_dump(mode="json", by_alias=True)},
            seed=config.seed,
            dataset_paths={"train": str(args.train), "valid": str(args.valid), "test": str(args.test)},
            code_version=__version__,
        )
        run_logger.log_manifest(manifest)

        model = init_model(kg, kind, args.dim, config.seed, bound=config.resolved_init_bound(args.dim))
        result = train(
            kg,
            model,
            config,
            on_record=run_logger.log_record,
            on_improvement=lambda best, epoch: save_checkpoint(best, run_logger.checkpoint_path),
            eval_workers=args.workers,
            record_wall_time=not args.no_wall_time,
        )
        save_checkpoint(result.model, run_logger.checkpoint_path)
        logger.success(f"Best epoch {result.best_epoch}; checkpoint at {run_logger.checkpoint_path}")

        if len(kg.test):
            raw, filt = evaluate_both(result.model, kg, "test", workers=args.workers)
            run_logger.write_report("test", raw)
            run_logger.write_report("test", filt)
            print(filt.summary_line())
        return EXIT_OK
    finally:
        logger.remove(sink_id)


def cmd_eval(args: argparse.Namespace) -> int:
    """Evaluate a checkpoint on one split and write eval_<split>_<raw|filt>.json."""
    kg = load_knowledge_graph(args.train, args.valid, args.test)
    model = load_checkpoint(args.checkpoint, kg)
    filtered = not args.raw
    report = evaluate(model, kg, args.split, filtered=filtered, workers=args.workers)

    run_dir = Path(args.run_dir) if args.run_dir else Path(args.checkpoint).parent
    RunLogger(run_dir, create=False).write_report(args.split, report)
    print(report.summary_line())
    return EXIT_OK


def parse_counts(text: str) -> Tuple[int, ...]:
    try:
        counts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--check expects five comma-separated integers, got {text!r}") from None
    if len(counts) != 5:
        raise UsageError(f"--check expects five counts (e,r,tr,va,te), got {len(counts)}")
    return counts


def cmd_stats(args: argparse.Namespace) -> int:
    """Print dataset statistics; with --check/--preset compare against expected counts."""
    expected: Optional[Tuple[int, ...]] = None
    if args.check and args.preset:
        raise UsageError("--check and --preset are mutually exclusive")
    if args.check:
        expected = parse_counts(args.check)
    elif args.preset:
        expected = DATASET_PRESETS[args.preset]

    kg = load_knowledge_graph(args.train, args.valid, args.test)
    counts = stats(kg).as_tuple()
    print("entities={} relations={} train={} valid={} test={}".format(*counts))

    if expected is not None and counts != tuple(expected):
        logger.error(f"Statistics mismatch: expected {tuple(expected)}, got {counts}")
        return EXIT_MISMATCH
    return EXIT_OK
