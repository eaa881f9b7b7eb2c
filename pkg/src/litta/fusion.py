"""Reciprocal rank fusion of per-variant rankings.

A page's fused score is ``sum_i 1 / (k_rrf + r_i)`` over the lists that contain
it, where ``r_i`` is its 1-based rank in list ``i``. Lists that miss the page
contribute exactly zero. Sums use ``math.fsum`` so the score does not depend on
the order the lists arrive in.

Ties in fused score are broken by the smaller best single-list rank, then by
ascending page id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

from .core import FUSED, PageId, RankedList

DEFAULT_RRF_K = 60.0

Reranker = Callable[[Sequence["FusedEntry"]], Sequence[float]]


@dataclass(frozen=True)
class FusedEntry:
    page_id: PageId
    rrf_score: float
    per_variant_ranks: Mapping[int, int]

    @property
    def best_rank(self) -> int:
        return min(self.per_variant_ranks.values())


@dataclass(frozen=True)
class FusedRanking:
    entries: tuple[FusedEntry, ...]
    k_rrf: float

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def page_ids(self) -> list[PageId]:
        return [e.page_id for e in self.entries]

    def to_ranked_list(self) -> RankedList:
        return RankedList(tuple((e.page_id, e.rrf_score) for e in self.entries), FUSED)


def rrf_fuse(lists: Sequence[RankedList], k_rrf: float = DEFAULT_RRF_K) -> FusedRanking:
    """Fuse ``lists`` over the union of their pages.

    Each list is keyed by its variant index when it has one, otherwise by its
    position in ``lists``.
    """
    if not lists:
        raise ValueError("rrf_fuse needs at least one ranked list")
    if not (k_rrf > 0) or not math.isfinite(k_rrf):
        raise ValueError(f"k_rrf must be a positive finite number, got {k_rrf!r}")

    ranks: dict[PageId, dict[int, int]] = {}
    used_keys: set[int] = set()
    for position, ranked in enumerate(lists):
        key = ranked.variant_index if ranked.variant_index is not None else position
        if key in used_keys:
            raise ValueError(f"two input lists share variant key {key}")
        used_keys.add(key)
        seen: set[PageId] = set()
        for rank, (page_id, _) in enumerate(ranked.entries, start=1):
            if page_id in seen:
                raise ValueError(f"page {page_id} appears twice in list {key}")
            seen.add(page_id)
            ranks.setdefault(page_id, {})[key] = rank

    entries = []
    for page_id, by_variant in ranks.items():
        score = math.fsum(1.0 / (k_rrf + r) for r in by_variant.values())
        ordered = dict(sorted(by_variant.items()))
        entries.append(FusedEntry(page_id, score, MappingProxyType(ordered)))
    entries.sort(key=lambda e: (-e.rrf_score, e.best_rank, e.page_id))
    return FusedRanking(tuple(entries), float(k_rrf))


def rerank_hook(fused: FusedRanking, top_n: int, reranker: Reranker | None = None) -> FusedRanking:
    """Optionally reorder the head of ``fused``.

    ``reranker`` maps the first ``top_n`` entries to scores (higher is better);
    the head is stably re-sorted by them and the tail is left alone. Entries keep
    their fused scores. Without a reranker this is the identity.
    """
    if reranker is None or top_n <= 0:
        return fused
    top_n = min(top_n, len(fused.entries))
    head = list(fused.entries[:top_n])
    scores = list(reranker(head))
    if len(scores) != len(head):
        raise ValueError(f"reranker returned {len(scores)} scores for {len(head)} entries")
    order = sorted(range(len(head)), key=lambda i: -scores[i])
    return FusedRanking(tuple(head[i] for i in order) + fused.entries[top_n:], fused.k_rrf)
