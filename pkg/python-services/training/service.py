"""
Training Service - mini-batch training with sparse Adam and early stopping
Drives the negative-sampling-free objective and the negative-sampling baselines,
selecting the checkpoint with the best validation filtered MRR.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from loguru import logger

from embedding_model.service import EmbeddingModel, align_relation_offset, build_batch
from evaluation.service import evaluate
from kg_data.service import KnowledgeGraph
from losses.service import LossGradients, log_loss_breakdown, nsf_loss, ns_baseline_loss
from shared.config import get_settings
from shared.errors import KGNSFError, NonFiniteGradientError, TrainingError
from shared.models import TrainConfig, TrainingObjective, TrainRecord
from tensor_ops.service import scatter_add_rows


@dataclass
class RowGradient:
    """Gradient restricted to the unique rows a batch touched"""

    rows: np.ndarray
    values: np.ndarray

    @classmethod
    def from_ids(cls, ids: np.ndarray, grads: np.ndarray) -> "RowGradient":
        """Sum gradients of repeated ids into one row each."""
        rows, inverse = np.unique(np.asarray(ids, dtype=np.int64), return_inverse=True)
        values = np.zeros((len(rows), grads.shape[1]), dtype=np.float64)
        scatter_add_rows(values, inverse.reshape(-1), grads)
        return cls(rows=rows, values=values)

    @classmethod
    def dense(cls, grad_table: np.ndarray) -> "RowGradient":
        return cls(rows=np.arange(grad_table.shape[0]), values=np.asarray(grad_table, dtype=np.float64))


@dataclass
class AdamState:
    """First/second moment accumulators shaped like each parameter table"""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_tables(cls, tables: Dict[str, np.ndarray], **kwargs) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t) for k, t in tables.items()},
            v={k: np.zeros_like(t) for k, t in tables.items()},
            **kwargs,
        )


def adam_step(
    tables: Dict[str, np.ndarray],
    grads: Dict[str, RowGradient],
    state: AdamState,
    lr: float,
) -> None:
    """
    One bias-corrected Adam update, in place.

    Only rows present in `grads` have their moments and values updated (lazy Adam);
    bias correction uses the global step count.

    Raises:
        NonFiniteGradientError: Naming the first block with a NaN/inf entry
    """
    for block, grad in grads.items():
        if not np.isfinite(grad.values).all():
            raise NonFiniteGradientError(block)

    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count

    for block, grad in grads.items():
        rows, g = grad.rows, grad.values
        m = state.m[block]
        v = state.v[block]
        m[rows] = state.beta1 * m[rows] + (1.0 - state.beta1) * g
        v[rows] = state.beta2 * v[rows] + (1.0 - state.beta2) * (g * g)
        m_hat = m[rows] / bc1
        v_hat = v[rows] / bc2
        tables[block][rows] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


class NegativeSampler:
    """
    Corrupts head or tail (fair coin) with a uniformly drawn entity.

    Corruptions that are known triples are redrawn up to `max_attempts` times, then accepted.
    `total_calls` counts invocations across all samplers.
    """

    total_calls = 0

    def __init__(
        self,
        kg: KnowledgeGraph,
        n: int,
        rng: np.random.Generator,
        filter_split: str = "all",
        max_attempts: int = None,
    ):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        if filter_split not in ("train", "all"):
            raise ValueError("filter_split must be 'train' or 'all'")
        self.kg = kg
        self.n = n
        self.rng = rng
        self.train_only = filter_split == "train"
        self.max_attempts = get_settings().max_neg_attempts if max_attempts is None else max_attempts
        self.calls = 0
        self.saturated = 0

    def sample(self, triples: np.ndarray) -> np.ndarray:
        """
        Returns:
            (len(triples) * n, 3) corruptions, positive-major
        """
        self.calls += 1
        NegativeSampler.total_calls += 1

        positives = np.repeat(np.asarray(triples, dtype=np.int64).reshape(-1, 3), self.n, axis=0)
        m = len(positives)
        corrupt_head = self.rng.random(m) < 0.5
        column = np.where(corrupt_head, 0, 2)
        negatives = positives.copy()
        negatives[np.arange(m), column] = self.rng.integers(0, self.kg.n_entities, size=m)

        for i in range(m):
            attempts = 1
            while self.kg.contains(negatives[i], self.train_only):
                if attempts >= self.max_attempts:
                    self.saturated += 1
                    break
                negatives[i, column[i]] = self.rng.integers(0, self.kg.n_entities)
                attempts += 1
        return negatives


def negative_sample(
    triples: np.ndarray,
    kg: KnowledgeGraph,
    n: int,
    rng: np.random.Generator,
    filter_split: str = "all",
) -> np.ndarray:
    """One-shot corruption of `triples` (n per positive)."""
    return NegativeSampler(kg, n, rng, filter_split).sample(triples)


@dataclass
class TrainResult:
    model: EmbeddingModel
    records: List[TrainRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_mrr: Optional[float] = None


def _row_gradients(ids, grads: LossGradients) -> Dict[str, RowGradient]:
    heads, rels, tails = ids
    return {
        "entity": RowGradient.from_ids(np.concatenate([heads, tails]), np.vstack([grads.dH, grads.dT])),
        "relation": RowGradient.from_ids(rels, grads.dR),
    }


def train(
    kg: KnowledgeGraph,
    model: EmbeddingModel,
    config: TrainConfig,
    on_record: Optional[Callable[[TrainRecord], None]] = None,
    on_improvement: Optional[Callable[[EmbeddingModel, int], None]] = None,
    eval_workers: int = None,
    record_wall_time: bool = True,
) -> TrainResult:
    """
    Train `model` in place and return the best checkpoint by validation filtered MRR.

    Each epoch shuffles the training triples, slices batches of `batch_size`
    (a trailing batch with fewer than 2 rows is dropped), and applies one Adam step
    per batch. Every `eval_every` epochs the validation split is ranked; training
    stops after `patience` evaluations without improvement or at `max_epochs`.
    Translational NSF runs re-center the relation offset (`align_relation_offset`)
    before each validation pass and before returning.

    Args:
        kg: Knowledge graph
        model: Initialized model, updated in place
        config: Training configuration
        on_record: Called with each TrainRecord (metrics.jsonl writer)
        on_improvement: Called with (best model, epoch) on every new best
        eval_workers: Threads for validation ranking
        record_wall_time: False writes 0.0 wall time so metric streams are byte-stable

    Returns:
        TrainResult holding the best model (the last one if nothing was evaluated)

    Raises:
        TrainingError: Batch or loss failures, with the epoch number
    """
    nsf = config.objective is TrainingObjective.NSF
    # A common relation offset is invisible to the translational NSF loss; pin it before scoring
    align_offset = nsf and model.kind.family == "transe" and (config.loss_from or "transe") == "transe"
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng, sdbn_rng, neg_rng = (np.random.default_rng(s) for s in seeds)

    sampler = None
    if not nsf:
        sampler = NegativeSampler(kg, config.n_negatives, neg_rng, config.neg_filter)

    tables = {"entity": model.entity_table, "relation": model.relation_table}
    state = AdamState.for_tables(tables)
    train_triples = kg.train
    has_valid = len(kg.valid) > 0
    if not has_valid:
        logger.warning("Validation split is empty; the last epoch's model will be returned")

    result = TrainResult(model=model)
    best_mrr = -np.inf
    stale_evals = 0

    logger.info(
        f"Training {model.kind.value} ({config.objective.value}) on {len(train_triples)} triples: "
        f"lr={config.lr}, b={config.batch_size}, d={model.dim}, max_epochs={config.max_epochs}"
    )

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        if not nsf and config.normalize_entities:
            model.normalize_entities()

        order = shuffle_rng.permutation(len(train_triples))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            triples = train_triples[idx]
            try:
                if nsf:
                    batch = build_batch(model, triples, config.sdbn, sdbn_rng, family=config.loss_from)
                    value, grads = nsf_loss(batch, config.loss)
                    ids = batch.ids
                else:
                    corrupted = sampler.sample(triples)
                    positives = build_batch(model, triples)
                    negatives = build_batch(model, corrupted)
                    value, grads = ns_baseline_loss(positives, negatives, model.kind, config.margin)
                    ids = tuple(np.concatenate([p, n]) for p, n in zip(positives.ids, negatives.ids))
                adam_step(tables, _row_gradients(ids, grads), state, config.lr)
            except KGNSFError as e:
                logger.error(f"Training failed at epoch {epoch}: {e}")
                raise TrainingError(epoch, str(e)) from e
            losses.append(value.total)
            log_loss_breakdown(value, prefix=f"epoch {epoch} ")

        if not losses:
            raise TrainingError(epoch, "no batch with at least 2 rows")
        train_loss = float(np.mean(losses))

        val_mrr = None
        if has_valid and epoch % config.eval_every == 0:
            if align_offset:
                align_relation_offset(model, train_triples)
            val_mrr = evaluate(model, kg, "valid", filtered=True, workers=eval_workers).mrr
            if val_mrr > best_mrr:
                best_mrr = val_mrr
                stale_evals = 0
                result.model = model.copy()
                result.best_epoch = epoch
                result.best_val_mrr = val_mrr
                logger.success(f"Epoch {epoch}: new best validation filtered MRR {val_mrr:.4f}")
                if on_improvement is not None:
                    on_improvement(result.model, epoch)
            else:
                stale_evals += 1

        wall = time.perf_counter() - started if record_wall_time else 0.0
        record = TrainRecord(epoch=epoch, train_loss=train_loss, val_mrr_filtered=val_mrr, wall_seconds=wall)
        result.records.append(record)
        if on_record is not None:
            on_record(record)
        logger.info(f"Epoch {epoch}: loss={train_loss:.6f} val_mrr_filt={val_mrr}")

        if stale_evals >= config.patience:
            logger.info(f"Early stopping at epoch {epoch} (patience {config.patience})")
            break

    if sampler is not None and sampler.saturated:
        logger.warning(f"{sampler.saturated} corruptions accepted after {sampler.max_attempts} attempts")
    if result.best_epoch is None:
        if align_offset:
            align_relation_offset(model, train_triples)
        result.model = model.copy()
        result.best_epoch = result.records[-1].epoch if result.records else None

    return result
