"""Filtered link-prediction evaluation: ranks, MRR, Hits@{1,3,10}.

Queries must already be reciprocal-augmented, so every query is a tail
prediction.  Candidates that are true tails for the same (s, r, t) key are
masked out before ranking.  Ties are scored at their mean rank.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Quadruple
from .model import IMEModel
from .tensor import no_grad

__all__ = ["RankingReport", "rank_from_scores", "rank_query", "evaluate"]

THREADS_ENV_VAR = "IME_THREADS"


@dataclass(frozen=True)
class RankingReport:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int

    def __post_init__(self):
        if self.n_queries < 1:
            raise ValueError("a ranking report needs at least one query")
        if not 0.0 < self.mrr <= 1.0:
            raise ValueError(f"MRR out of (0, 1]: {self.mrr}")
        if not self.hits1 <= self.hits3 <= self.hits10 <= 1.0:
            raise ValueError(f"Hits must be nested: {self.hits1}, {self.hits3}, {self.hits10}")
        if self.mrr < self.hits1:
            raise ValueError(f"MRR {self.mrr} below Hits@1 {self.hits1}")

    def csv_row(self) -> str:
        return f"{self.mrr!r},{self.hits1!r},{self.hits3!r},{self.hits10!r},{self.n_queries}"

    def format(self) -> str:
        return (
            f"queries  {self.n_queries}\n"
            f"MRR      {self.mrr:.4f}\n"
            f"Hits@1   {self.hits1:.4f}\n"
            f"Hits@3   {self.hits3:.4f}\n"
            f"Hits@10  {self.hits10:.4f}"
        )


def rank_from_scores(scores: np.ndarray, true_tail: int, known_tails) -> float:
    """Mean-tie rank of the true tail after masking the other known answers.

    rank = 1 + (#candidates scoring strictly higher) + (#exact ties) / 2,
    kept unrounded so reciprocal ranks are unbiased.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError(f"expected a flat score vector, got shape {scores.shape}")
    if not 0 <= true_tail < scores.size:
        raise IndexError(f"true tail {true_tail} out of range [0, {scores.size})")
    mask = np.zeros(scores.size, dtype=bool)
    masked = [o for o in known_tails if o != true_tail]
    if masked:
        mask[masked] = True
    true_score = scores[true_tail]
    live = ~mask
    better = int(np.count_nonzero(live & (scores > true_score)))
    ties = int(np.count_nonzero(live & (scores == true_score))) - 1  # minus the true tail itself
    return 1.0 + better + 0.5 * ties


def rank_query(model: IMEModel, query: Quadruple, filter_index) -> float:
    """Filtered rank of one augmented query's true tail."""
    key = (query.s, query.r, query.t)
    if key not in filter_index:
        raise KeyError(f"query key {key} missing from the filter index")
    with no_grad():
        scores = model.score_all(query.s, query.r, query.t).data
    return rank_from_scores(scores, query.o, filter_index[key])


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None


def evaluate(
    model: IMEModel,
    queries,
    filter_index,
    threads: int | None = None,
    per_relation: bool = False,
):
    """Filtered MRR and Hits@N over a reciprocal-augmented query list.

    Queries are independent, so they may be scored by a thread pool
    (capped by the IME_THREADS variable); per-query ranks land in fixed
    slots and are aggregated sequentially, keeping results identical for
    any thread count.
    """
    queries = list(queries)
    if not queries:
        raise ValueError("cannot evaluate an empty query list")
    threads = _resolve_threads(threads)
    ranks = np.empty(len(queries), dtype=np.float64)

    def work(i: int) -> None:
        ranks[i] = rank_query(model, queries[i], filter_index)

    if threads == 1 or len(queries) < 2:
        for i in range(len(queries)):
            work(i)
    else:
        with no_grad():
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, range(len(queries))))

    report = _report_from_ranks(ranks)
    if not per_relation:
        return report
    by_relation: dict[int, RankingReport] = {}
    rel = np.asarray([q.r for q in queries])
    for r in sorted(set(rel.tolist())):
        by_relation[r] = _report_from_ranks(ranks[rel == r])
    return report, by_relation


def _report_from_ranks(ranks: np.ndarray) -> RankingReport:
    return RankingReport(
        mrr=float(np.mean(1.0 / ranks)),
        hits1=float(np.mean(ranks <= 1.0)),
        hits3=float(np.mean(ranks <= 3.0)),
        hits10=float(np.mean(ranks <= 10.0)),
        n_queries=int(ranks.size),
    )
