"""Domain types shared by every stage of the retrieval engine.

Everything here is immutable once constructed. Embedding matrices are stored
as read-only float32 arrays; scoring code upcasts to float64 itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "FUSED",
    "PageId",
    "PageEmbedding",
    "QueryTokens",
    "RankedList",
    "RankedListError",
    "RetrievalConfig",
    "parse_page_id",
    "validate_ranked_list",
]

FUSED = "fused"


@dataclass(frozen=True, order=True)
class PageId:
    """A page position inside one corpus, rendered as ``corpus_id#page_index``.

    Ordering is ``(corpus_id, page_index)``, which is the order used when
    breaking score ties.
    """

    corpus_id: str
    page_index: int

    def __post_init__(self) -> None:
        if not isinstance(self.corpus_id, str) or not self.corpus_id:
            raise ValueError("corpus_id must be a non-empty string")
        if "#" in self.corpus_id or any(c in self.corpus_id for c in "\t\r\n"):
            raise ValueError(f"corpus_id may not contain '#' or whitespace controls: {self.corpus_id!r}")
        if isinstance(self.page_index, bool) or not isinstance(self.page_index, int) or self.page_index < 0:
            raise ValueError(f"page_index must be a non-negative integer, got {self.page_index!r}")

    def __str__(self) -> str:
        return f"{self.corpus_id}#{self.page_index}"


def parse_page_id(s: str) -> PageId:
    """Parse ``corpus_id#page_index`` back into a :class:`PageId`."""
    if s.count("#") != 1:
        raise ValueError(f"page id {s!r}: expected exactly one '#' separator")
    corpus_id, _, index_part = s.partition("#")
    if not corpus_id:
        raise ValueError(f"page id {s!r}: corpus_id is empty")
    if not index_part.isascii() or not index_part.isdigit():
        raise ValueError(f"page id {s!r}: page_index {index_part!r} is not a non-negative integer")
    return PageId(corpus_id, int(index_part))


def _frozen_matrix(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float32, copy=True)
    if arr.ndim != 2:
        raise ValueError(f"{what}: expected a 2-D matrix, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{what}: matrix must have at least one row and one column, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: matrix contains non-finite components")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PageEmbedding:
    """Multi-vector representation of one page: an ``M x d`` float32 matrix."""

    page_id: PageId
    vectors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vectors", _frozen_matrix(self.vectors, f"page {self.page_id}"))

    @property
    def num_vectors(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PageEmbedding):
            return NotImplemented
        return self.page_id == other.page_id and np.array_equal(self.vectors, other.vectors)

    def __hash__(self) -> int:
        return hash((self.page_id, self.vectors.shape, self.vectors.tobytes()))


@dataclass(frozen=True, eq=False)
class QueryTokens:
    """Token embeddings (``L x d``) of one query variant. Variant 0 is the original query."""

    variant_index: int
    text: str
    vectors: np.ndarray

    def __post_init__(self) -> None:
        if self.variant_index < 0:
            raise ValueError("variant_index must be non-negative")
        object.__setattr__(self, "vectors", _frozen_matrix(self.vectors, f"query variant {self.variant_index}"))

    @property
    def num_tokens(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QueryTokens):
            return NotImplemented
        return (
            self.variant_index == other.variant_index
            and self.text == other.text
            and np.array_equal(self.vectors, other.vectors)
        )

    def __hash__(self) -> int:
        return hash((self.variant_index, self.text, self.vectors.tobytes()))


class RankedListError(ValueError):
    pass


@dataclass(frozen=True)
class RankedList:
    """Ordered ``(page_id, score)`` pairs from one retrieval pass.

    ``source`` is ``"variant:<i>"`` for a per-variant list or ``"fused"``.
    Ranks are 1-based positions in ``entries``.
    """

    entries: tuple[tuple[PageId, float], ...] = ()
    source: str = FUSED

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple((p, float(s)) for p, s in self.entries))

    @classmethod
    def for_variant(cls, variant_index: int, entries: Sequence[tuple[PageId, float]]) -> "RankedList":
        return cls(tuple(entries), f"variant:{variant_index}")

    @property
    def variant_index(self) -> int | None:
        if self.source.startswith("variant:"):
            return int(self.source.split(":", 1)[1])
        return None

    @property
    def page_ids(self) -> list[PageId]:
        return [p for p, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def rank_of(self, page_id: PageId) -> int | None:
        for i, (p, _) in enumerate(self.entries, start=1):
            if p == page_id:
                return i
        return None

    def truncate(self, k: int) -> "RankedList":
        return RankedList(self.entries[:k], self.source)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[PageId, float]]:
        return iter(self.entries)


def validate_ranked_list(ranked: RankedList) -> None:
    """Raise :class:`RankedListError` unless ids are unique and scores non-increasing.

    Equal scores must appear in ascending :class:`PageId` order unless the list
    is fused, where the first tie-break key (best per-variant rank) is not
    visible from the list alone.
    """
    seen: set[PageId] = set()
    previous: tuple[PageId, float] | None = None
    for page_id, score in ranked.entries:
        if page_id in seen:
            raise RankedListError(f"duplicate page id {page_id} in {ranked.source} list")
        seen.add(page_id)
        if previous is not None:
            prev_id, prev_score = previous
            if score > prev_score:
                raise RankedListError(f"scores increase at {page_id}: {prev_score!r} < {score!r}")
            if score == prev_score and ranked.source != FUSED and page_id < prev_id:
                raise RankedListError(f"tie between {prev_id} and {page_id} not broken by page id")
        previous = (page_id, score)


@dataclass(frozen=True)
class RetrievalConfig:
    """Online retrieval knobs.

    ``num_queries`` counts the original query, so 3 means the original plus two
    expansions. ``per_variant_depth`` is the per-variant top-k fed to fusion and
    ``final_k`` the number of fused pages returned.
    """

    num_queries: int = 3
    per_variant_depth: int = 20
    final_k: int = 20
    rrf_constant: float = 60.0
    shortlist_size: int = 200
    score_batch_size: int = 32

    def __post_init__(self) -> None:
        for name in ("num_queries", "per_variant_depth", "final_k", "shortlist_size", "score_batch_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not (self.rrf_constant > 0) or not np.isfinite(self.rrf_constant):
            raise ValueError(f"rrf_constant must be a positive finite number, got {self.rrf_constant!r}")
        object.__setattr__(self, "rrf_constant", float(self.rrf_constant))
        if self.shortlist_size < self.per_variant_depth:
            raise ValueError(
                f"shortlist_size ({self.shortlist_size}) must be >= per_variant_depth ({self.per_variant_depth})"
            )

    def to_dict(self) -> dict:
        return {
            "num_queries": self.num_queries,
            "per_variant_depth": self.per_variant_depth,
            "final_k": self.final_k,
            "rrf_constant": self.rrf_constant,
            "shortlist_size": self.shortlist_size,
            "score_batch_size": self.score_batch_size,
        }
