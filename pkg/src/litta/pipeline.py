"""End-to-end multi-query retrieval.

expand -> embed each variant -> centroid shortlist -> exact MaxSim top-k per
variant -> reciprocal rank fusion -> optional rerank -> top-K.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .core import FUSED, PageId, QueryTokens, RankedList, RetrievalConfig
from .expansion import VariantGenerator, VariantSet, expand
from .fusion import Reranker, rerank_hook, rrf_fuse
from .index import DimensionMismatchError, EmbeddingIndex, shortlist
from .providers import Embedder, ProviderError
from .scoring import EvaluationCounter, score_candidates

log = logging.getLogger(__name__)


@dataclass
class Providers:
    embedder: Embedder
    generator: VariantGenerator | None = None
    stopwords: frozenset[str] | None = None


@dataclass(frozen=True)
class RetrievalStats:
    maxsim_evaluations: int
    dot_products: int
    candidates_per_variant: tuple[int, ...]
    wall_time_s: float = 0.0
    stage_times_s: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    final: RankedList
    per_variant: tuple[RankedList, ...]
    variant_set: VariantSet
    stats: RetrievalStats

    def to_dict(self, include_timings: bool = True) -> dict:
        out = {
            "query_id": self.query_id,
            "final": [{"rank": i, "page_id": str(p), "score": s} for i, (p, s) in enumerate(self.final, start=1)],
            "variants": self.variant_set.to_dict()["variants"],
            "per_variant": [
                {
                    "variant_index": lst.variant_index,
                    "ranking": [{"page_id": str(p), "score": s} for p, s in lst],
                }
                for lst in self.per_variant
            ],
            "stats": {
                "maxsim_evaluations": self.stats.maxsim_evaluations,
                "dot_products": self.stats.dot_products,
                "candidates_per_variant": list(self.stats.candidates_per_variant),
            },
        }
        if include_timings:
            out["stats"]["wall_time_s"] = self.stats.wall_time_s
            out["stats"]["stage_times_s"] = dict(self.stats.stage_times_s)
        return out


def _embed_variant(providers: Providers, index_dim: int, i: int, text: str) -> QueryTokens:
    (matrix,) = providers.embedder.embed_queries([text])
    tokens = QueryTokens(i, text, matrix)
    if tokens.dim != index_dim:
        raise DimensionMismatchError(f"variant {i} embedded with dimension {tokens.dim}, index has {index_dim}")
    return tokens


def retrieve(
    query_id: str,
    query_text: str,
    index: EmbeddingIndex,
    cfg: RetrievalConfig,
    providers: Providers,
    *,
    reranker: Reranker | None = None,
    rerank_top_n: int = 0,
    max_workers: int = 1,
) -> RetrievalResult:
    """Run one query through the full pipeline.

    A failure embedding the original query propagates. Failures on expanded
    variants drop that variant with a warning. Output does not depend on
    ``max_workers``: per-variant results are fused in variant order.
    """
    started = time.perf_counter()
    times: dict[str, float] = {}

    t0 = time.perf_counter()
    variant_set = expand(query_text, cfg, providers.generator, stopwords=providers.stopwords)
    times["expand"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    queries: list[QueryTokens] = [_embed_variant(providers, index.dim, 0, variant_set.variants[0])]
    for i, text in enumerate(variant_set.variants[1:], start=1):
        try:
            queries.append(_embed_variant(providers, index.dim, i, text))
        except (ProviderError, DimensionMismatchError, ValueError) as exc:
            log.warning("query %s: dropping variant %d (%r): %s", query_id, i, text, exc)
    times["embed"] = time.perf_counter() - t0

    counter = EvaluationCounter()

    def run_variant(q: QueryTokens) -> tuple[RankedList, float, float, int]:
        s0 = time.perf_counter()
        candidates = shortlist(index, q, cfg.shortlist_size).page_ids
        s1 = time.perf_counter()
        ranked = score_candidates(
            q, index, candidates, cfg.per_variant_depth, batch_size=cfg.score_batch_size, counter=counter
        )
        return ranked, s1 - s0, time.perf_counter() - s1, len(candidates)

    if max_workers > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(run_variant, queries))
    else:
        outcomes = [run_variant(q) for q in queries]
    per_variant = tuple(o[0] for o in outcomes)
    times["shortlist"] = sum(o[1] for o in outcomes)
    times["score"] = sum(o[2] for o in outcomes)

    t0 = time.perf_counter()
    fused = rrf_fuse(per_variant, cfg.rrf_constant)
    fused = rerank_hook(fused, rerank_top_n, reranker)
    final = RankedList(fused.to_ranked_list().entries[: cfg.final_k], FUSED)
    times["fuse"] = time.perf_counter() - t0

    snap = counter.snapshot()
    stats = RetrievalStats(
        maxsim_evaluations=snap["maxsim_evaluations"],
        dot_products=snap["dot_products"],
        candidates_per_variant=tuple(o[3] for o in outcomes),
        wall_time_s=time.perf_counter() - started,
        stage_times_s=times,
    )
    return RetrievalResult(query_id, final, per_variant, variant_set, stats)


@dataclass(frozen=True)
class AnswerRequest:
    """Payload for a downstream answer generator; nothing is generated here."""

    query: str
    evidence: tuple[PageId, ...]

    def to_dict(self) -> dict:
        return {"query": self.query, "evidence": [str(p) for p in self.evidence]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


def answer_stub(query_text: str, evidence: Sequence[PageId], max_evidence: int = 20) -> AnswerRequest:
    if not evidence:
        raise ValueError("answer request needs at least one evidence page")
    if len(evidence) > max_evidence:
        raise ValueError(f"{len(evidence)} evidence pages exceed the limit of {max_evidence}")
    return AnswerRequest(query_text, tuple(evidence))
