"""Query variant generation with a deterministic fallback.

A :class:`VariantSet` always holds exactly ``num_queries`` pairwise-distinct
strings with the untouched original query first. Whatever the generator fails
to supply is filled with fallback variants derived from the query text alone:

* ``i = 1``: content words. Tokens are split on whitespace, stripped of
  surrounding punctuation and lowercased; stopwords are dropped.
* ``i = 2``: the same content words sorted by descending length, then
  alphabetically.
* ``i >= 3``: the ``i = 2`` variant followed by the token ``#v<i>``.

A fallback that collides with an existing variant (compared case-insensitively
after whitespace normalization) gets `` #v<i>`` appended until it is distinct.
"""

from __future__ import annotations

import enum
import logging
import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .core import RetrievalConfig

log = logging.getLogger(__name__)

STOPWORDS_VERSION = 1


class Provenance(str, enum.Enum):
    ORIGINAL = "original"
    GENERATED = "generated"
    FALLBACK = "fallback"


class EmptyQueryError(ValueError):
    pass


class VariantGenerator(Protocol):
    def generate(self, query: str, n: int) -> Sequence[str]:
        """Return up to ``n`` candidate rewrites of ``query``; may raise."""
        ...


class FallbackOnlyGenerator:
    """Generator that never proposes anything, so every variant is a fallback."""

    def generate(self, query: str, n: int) -> Sequence[str]:
        return []


@dataclass(frozen=True)
class VariantSet:
    original: str
    variants: tuple[str, ...]
    provenance: tuple[Provenance, ...]

    def __len__(self) -> int:
        return len(self.variants)

    def to_dict(self) -> dict:
        return {
            "original": self.original,
            "variants": [
                {"index": i, "text": v, "provenance": p.value}
                for i, (v, p) in enumerate(zip(self.variants, self.provenance))
            ],
        }


def _parse_stopwords(text: str) -> frozenset[str]:
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


@lru_cache(maxsize=None)
def load_stopwords(path: str | None = None) -> frozenset[str]:
    """Stopwords from ``path``, or the embedded list when ``path`` is None."""
    if path is None:
        text = resources.files("litta").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return _parse_stopwords(text)


def load_prompt_template(path: str | None = None) -> str:
    """The expansion prompt; the embedded default has ``{query}`` and ``{num_variants}`` slots."""
    if path is None:
        return resources.files("litta").joinpath("data/expansion_prompt.txt").read_text(encoding="utf-8")
    return Path(path).read_text(encoding="utf-8")


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def variant_key(text: str) -> str:
    return normalize_whitespace(text).casefold()


def content_words(query: str, stopwords: frozenset[str] | None = None) -> list[str]:
    stopwords = load_stopwords() if stopwords is None else stopwords
    words = []
    for token in query.split():
        word = token.strip(string.punctuation).lower()
        if word and word not in stopwords:
            words.append(word)
    return words


def _base_fallback(query: str, i: int, stopwords: frozenset[str] | None) -> str:
    words = content_words(query, stopwords)
    if not words:
        # nothing but stopwords/punctuation: keep the query's own words
        words = [w for w in (t.strip(string.punctuation).lower() for t in query.split()) if w]
        if not words:
            words = query.split()
    if i == 1:
        return " ".join(words)
    rotated = " ".join(sorted(words, key=lambda w: (-len(w), w)))
    if i == 2:
        return rotated
    return f"{rotated} #v{i}"


def deterministic_fallback(
    query: str,
    i: int,
    existing: Iterable[str] = (),
    stopwords: frozenset[str] | None = None,
) -> str:
    """Fallback variant number ``i`` (1-based) of ``query``.

    The result never collides with ``query`` or any string in ``existing``.
    """
    if i < 1:
        raise ValueError(f"fallback index must be >= 1, got {i}")
    taken = {variant_key(query)} | {variant_key(e) for e in existing}
    candidate = _base_fallback(query, i, stopwords)
    while variant_key(candidate) in taken:
        candidate = f"{candidate} #v{i}"
    return candidate


def expand(
    query: str,
    cfg: RetrievalConfig,
    generator: VariantGenerator | None = None,
    *,
    stopwords: frozenset[str] | None = None,
) -> VariantSet:
    if not query.strip():
        raise EmptyQueryError("query is empty")
    q = cfg.num_queries
    variants = [query]
    provenance = [Provenance.ORIGINAL]
    if q == 1:
        return VariantSet(query, tuple(variants), tuple(provenance))

    proposed: Sequence[str] = []
    if generator is not None:
        try:
            proposed = list(generator.generate(query, q - 1))
        except Exception as exc:  # any generator failure is absorbed by the fallback
            log.warning("variant generator failed, using deterministic fallback: %s", exc)
            proposed = []

    taken = {variant_key(query)}
    for text in proposed:
        if len(variants) == q:
            break
        if not isinstance(text, str):
            continue
        text = normalize_whitespace(text)
        if not text or variant_key(text) in taken:
            continue
        taken.add(variant_key(text))
        variants.append(text)
        provenance.append(Provenance.GENERATED)

    i = 1
    while len(variants) < q:
        text = deterministic_fallback(query, i, variants[1:], stopwords)
        taken.add(variant_key(text))
        variants.append(text)
        provenance.append(Provenance.FALLBACK)
        i += 1
    return VariantSet(query, tuple(variants), tuple(provenance))
