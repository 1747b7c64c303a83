"""
Evaluation Service - raw and filtered link prediction
Per-triple head/tail ranks and the MRR, Hits@k and MR aggregates
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence, Tuple

import numpy as np
from loguru import logger

from embedding_model.service import EmbeddingModel, score_all_heads, score_all_tails
from kg_data.service import KnowledgeGraph, filtered_candidates
from shared.config import get_settings
from shared.errors import DatasetError
from shared.models import MetricsReport, RankResult

HITS_AT = (1, 3, 10)


def _rank(scores: np.ndarray, gold: int, excluded) -> int:
    """1 + number of other candidates scoring >= the gold entity (ties count against gold)."""
    competitors = scores >= scores[gold]
    competitors[gold] = False
    if excluded:
        competitors[list(excluded)] = False
    return 1 + int(competitors.sum())


def _ranks(model: EmbeddingModel, kg: KnowledgeGraph, triple: Sequence[int]) -> Tuple[int, int, int, int]:
    """(raw head, raw tail, filtered head, filtered tail) ranks from one scoring pass per direction."""
    h, r, t = (int(x) for x in triple)
    head_scores = score_all_heads(model, r, t)
    tail_scores = score_all_tails(model, h, r)
    head_filter = filtered_candidates(kg, (None, r, t), h)
    tail_filter = filtered_candidates(kg, (h, r, None), t)
    return (
        _rank(head_scores, h, ()),
        _rank(tail_scores, t, ()),
        _rank(head_scores, h, head_filter),
        _rank(tail_scores, t, tail_filter),
    )


def rank_triple(model: EmbeddingModel, kg: KnowledgeGraph, triple: Sequence[int], filtered: bool) -> RankResult:
    """
    Head and tail rank of one triple.

    Filtered ranks drop every other entity that completes the query into a known triple.

    Raises:
        IdRangeError: If the triple's ids are out of range
    """
    raw_h, raw_t, filt_h, filt_t = _ranks(model, kg, triple)
    if filtered:
        return RankResult(rank_head=filt_h, rank_tail=filt_t, filtered=True)
    return RankResult(rank_head=raw_h, rank_tail=raw_t, filtered=False)


def aggregate_ranks(rank_head: np.ndarray, rank_tail: np.ndarray, filtered: bool) -> MetricsReport:
    """
    MRR = (1 / 2|S|) sum (1/rank_h + 1/rank_t); Hits@k = share of ranks <= k; MR = mean rank.

    Reductions run in triple-index order so reports are bit-stable.
    """
    rank_head = np.asarray(rank_head, dtype=np.float64)
    rank_tail = np.asarray(rank_tail, dtype=np.float64)
    n = len(rank_head)
    if n == 0:
        raise DatasetError("Cannot aggregate an empty rank list")

    ranks = np.concatenate([rank_head, rank_tail])
    return MetricsReport(
        mr=float(ranks.sum() / (2 * n)),
        mrr=float((1.0 / ranks).sum() / (2 * n)),
        hits={k: float((ranks <= k).sum() / (2 * n)) for k in HITS_AT},
        n_triples=n,
        filtered=filtered,
        mrr_head=float((1.0 / rank_head).sum() / n),
        mrr_tail=float((1.0 / rank_tail).sum() / n),
    )


def compute_ranks(model: EmbeddingModel, kg: KnowledgeGraph, triples: np.ndarray, workers: int = None) -> np.ndarray:
    """
    Ranks for every triple, as an (n, 4) array: raw head, raw tail, filtered head, filtered tail.

    Args:
        workers: Thread count; the model is only read, results land by index
    """
    settings = get_settings()
    workers = settings.eval_workers if workers is None else workers
    chunk = settings.eval_chunk_size
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    out = np.empty((len(triples), 4), dtype=np.int64)

    def run(start: int) -> None:
        for i in range(start, min(start + chunk, len(triples))):
            out[i] = _ranks(model, kg, triples[i])

    starts = range(0, len(triples), chunk)
    if workers <= 1:
        for start in starts:
            run(start)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    return out


def evaluate_both(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    split: str,
    workers: int = None,
) -> Tuple[MetricsReport, MetricsReport]:
    """
    Raw and filtered reports for a split from one ranking pass.

    Raises:
        DatasetError: If the split is empty
    """
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")
    triples = kg.split(split)
    if len(triples) == 0:
        raise DatasetError(f"Split '{split}' is empty")

    logger.info(f"Evaluating {len(triples)} {split} triples")
    ranks = compute_ranks(model, kg, triples, workers)
    raw = aggregate_ranks(ranks[:, 0], ranks[:, 1], filtered=False)
    filt = aggregate_ranks(ranks[:, 2], ranks[:, 3], filtered=True)
    logger.info(f"[{split}] raw: {raw.summary_line()}")
    logger.info(f"[{split}] filtered: {filt.summary_line()}")
    return raw, filt


def evaluate(
    model: EmbeddingModel,
    kg: KnowledgeGraph,
    split: str,
    filtered: bool,
    workers: int = None,
) -> MetricsReport:
    """Raw or filtered MetricsReport for the valid or test split."""
    raw, filt = evaluate_both(model, kg, split, workers)
    return filt if filtered else raw
