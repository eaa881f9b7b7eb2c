"""Exact late-interaction (MaxSim) scoring.

For query tokens ``t_1..t_L`` and page vectors ``v_1..v_M`` the score is
``sum_l max_m t_l . v_m`` using the raw dot product. Inputs are float32; all
arithmetic is done in float64.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import PageEmbedding, PageId, QueryTokens, RankedList
from .index import DimensionMismatchError, EmbeddingIndex, IndexLookupError

DEFAULT_BATCH_SIZE = 32


@dataclass(frozen=True)
class ScoreBreakdown:
    total: float
    per_token_max: tuple[float, ...]


class EvaluationCounter:
    """Thread-safe tally of MaxSim evaluations and the dot products they cost."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._evaluations = 0
        self._dot_products = 0

    def add(self, evaluations: int, dot_products: int) -> None:
        with self._lock:
            self._evaluations += evaluations
            self._dot_products += dot_products

    @property
    def evaluations(self) -> int:
        with self._lock:
            return self._evaluations

    @property
    def dot_products(self) -> int:
        with self._lock:
            return self._dot_products

    def reset(self) -> None:
        with self._lock:
            self._evaluations = 0
            self._dot_products = 0

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {"maxsim_evaluations": self._evaluations, "dot_products": self._dot_products}


# process-wide tally; score_candidates always feeds it in addition to any caller counter
GLOBAL_COUNTER = EvaluationCounter()


def stats_snapshot() -> dict[str, int]:
    return GLOBAL_COUNTER.snapshot()


def _check_dims(query: QueryTokens, dim: int) -> None:
    if query.dim != dim:
        raise DimensionMismatchError(f"query dimension {query.dim} does not match page dimension {dim}")


def maxsim(query: QueryTokens, page: PageEmbedding) -> ScoreBreakdown:
    _check_dims(query, page.dim)
    sims = query.vectors.astype(np.float64) @ page.vectors.astype(np.float64).T
    per_token = sims.max(axis=1)
    return ScoreBreakdown(total=math.fsum(per_token), per_token_max=tuple(float(x) for x in per_token))


def batch_maxsim(query: QueryTokens, pages: Sequence[PageEmbedding]) -> np.ndarray:
    """MaxSim totals for several pages with a single matrix product.

    Page matrices are stacked row-wise and the per-page maxima are taken with
    ``np.maximum.reduceat`` over the row offsets.
    """
    if not pages:
        return np.zeros(0, dtype=np.float64)
    for page in pages:
        _check_dims(query, page.dim)
    stacked = np.concatenate([p.vectors for p in pages], axis=0).astype(np.float64)
    offsets = np.cumsum([0] + [p.num_vectors for p in pages[:-1]])
    sims = query.vectors.astype(np.float64) @ stacked.T
    per_token = np.maximum.reduceat(sims, offsets, axis=1)
    return np.array([math.fsum(col) for col in per_token.T])


def rank_by_score(
    page_ids: Sequence[PageId], scores: np.ndarray, k: int, source: str
) -> RankedList:
    """Top-``k`` by score descending, ties by ascending page id."""
    order = sorted(range(len(page_ids)), key=lambda i: (-scores[i], page_ids[i]))[:k]
    return RankedList(tuple((page_ids[i], float(scores[i])) for i in order), source)


def score_candidates(
    query: QueryTokens,
    index: EmbeddingIndex,
    candidates: Sequence[PageId],
    k: int,
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
    counter: EvaluationCounter | None = None,
) -> RankedList:
    """Rescore ``candidates`` exactly and keep the best ``k``.

    Exactly ``len(candidates)`` MaxSim evaluations are recorded.
    """
    if k < 1:
        raise ValueError(f"depth k must be >= 1, got {k}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    _check_dims(query, index.dim)
    pages = []
    for page_id in candidates:
        try:
            pages.append(index.page(page_id))
        except IndexLookupError:
            raise IndexLookupError(f"candidate {page_id} is not in the index") from None
    if len(set(candidates)) != len(candidates):
        raise ValueError("candidate list contains duplicate page ids")

    scores = np.empty(len(pages), dtype=np.float64)
    for start in range(0, len(pages), batch_size):
        chunk = pages[start : start + batch_size]
        scores[start : start + len(chunk)] = batch_maxsim(query, chunk)
    dots = query.num_tokens * sum(p.num_vectors for p in pages)
    GLOBAL_COUNTER.add(len(pages), dots)
    if counter is not None:
        counter.add(len(pages), dots)
    return rank_by_score(list(candidates), scores, k, f"variant:{query.variant_index}")
