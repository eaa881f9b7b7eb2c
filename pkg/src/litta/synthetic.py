"""Deterministic synthetic corpora for hermetic experiments.

Pages are plain token strings embedded with :class:`~litta.providers.HashEmbedder`,
so every experiment built from them is reproducible bit for bit.

:func:`terminology_mismatch_corpus` models the case where users and documents
name things differently. Queries are phrased the way a user types them
(capitalized terms, trailing punctuation, function words); gold pages use the
document's lowercase terminology. Under hash embeddings the two spellings are
unrelated tokens, so the original query shares no token with its gold page,
while the content-word fallback (lowercased, punctuation stripped) matches it
exactly. Decoy "FAQ" pages repeat the user-facing phrasing and win the
original query's ranking.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PageEmbedding, PageId
from .index import EmbeddingIndex, build_index
from .providers import HashEmbedder

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        syllables = rng.integers(2, 4)
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        ) + _CONSONANTS[rng.integers(len(_CONSONANTS))]
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


@dataclass(frozen=True)
class SyntheticCorpus:
    corpus_id: str
    page_texts: tuple[tuple[PageId, str], ...]
    queries: tuple[tuple[str, str], ...]
    qrels: dict[str, frozenset[PageId]]

    def pages(self, embedder: HashEmbedder) -> list[PageEmbedding]:
        matrices = embedder.embed_pages([text for _, text in self.page_texts])
        return [PageEmbedding(pid, m) for (pid, _), m in zip(self.page_texts, matrices)]

    def build_index(self, embedder: HashEmbedder, created_at: str = "1970-01-01T00:00:00+00:00") -> EmbeddingIndex:
        return build_index(self.pages(embedder), created_at=created_at)

    def write(self, directory: str | os.PathLike) -> dict[str, Path]:
        """Write ``pages.jsonl``, ``queries.jsonl`` and ``qrels.tsv`` for the CLI."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "pages": directory / "pages.jsonl",
            "queries": directory / "queries.jsonl",
            "qrels": directory / "qrels.tsv",
        }
        paths["pages"].write_text(
            "".join(json.dumps({"page_id": str(p), "text": t}) + "\n" for p, t in self.page_texts), encoding="utf-8"
        )
        paths["queries"].write_text(
            "".join(json.dumps({"query_id": q, "text": t}) + "\n" for q, t in self.queries), encoding="utf-8"
        )
        paths["qrels"].write_text(
            "".join(f"{q}\t{p}\n" for q, pages in self.qrels.items() for p in sorted(pages)), encoding="utf-8"
        )
        return paths


def terminology_mismatch_corpus(
    num_pages: int = 50,
    num_queries: int = 20,
    seed: int = 0,
    corpus_id: str = "manual",
    filler_per_page: int = 12,
) -> SyntheticCorpus:
    """``num_queries`` gold pages followed by ``num_pages - num_queries`` decoys.

    Every query reads ``What is the Unit <Term1> of the <Term2>?``. All gold
    pages carry the shared term ``unit`` plus their own two terms, so the fallback
    variants rank every gold page above every decoy and their own gold page first.
    """
    if num_queries < 1 or num_pages <= num_queries:
        raise ValueError("need at least one query and more pages than queries")
    rng = np.random.default_rng(seed)
    taken = {"unit"}
    terms = _pseudo_words(rng, 2 * num_queries, taken)
    filler = _pseudo_words(rng, 4 * filler_per_page, taken)

    page_texts: list[tuple[PageId, str]] = []
    queries: list[tuple[str, str]] = []
    qrels: dict[str, frozenset[PageId]] = {}
    for j in range(num_queries):
        a, b = terms[2 * j], terms[2 * j + 1]
        body = list(rng.choice(filler, size=filler_per_page, replace=False))
        tokens = ["unit", a, b] + body
        order = rng.permutation(len(tokens))
        page_id = PageId(corpus_id, j)
        page_texts.append((page_id, " ".join(tokens[i] for i in order)))
        qid = f"q{j:03d}"
        queries.append((qid, f"What is the Unit {a.capitalize()} of the {b.capitalize()}?"))
        qrels[qid] = frozenset({page_id})

    user_terms = [t.capitalize() for t in terms]
    for j in range(num_queries, num_pages):
        # decoys echo the user-facing phrasing, never the document terms
        echoed = list(rng.choice(user_terms, size=2, replace=False))
        tokens = ["What", "is", "the", "Unit", "of", "the"] + echoed + [f.capitalize() for f in rng.choice(filler, size=4, replace=False)]
        page_texts.append((PageId(corpus_id, j), " ".join(tokens)))
    return SyntheticCorpus(corpus_id, tuple(page_texts), tuple(queries), qrels)


def random_corpus(
    num_pages: int,
    seed: int = 0,
    corpus_id: str = "synth",
    vocabulary: int = 300,
    tokens_per_page: tuple[int, int] = (5, 30),
    num_queries: int = 10,
    query_tokens: tuple[int, int] = (2, 6),
) -> SyntheticCorpus:
    """Pages and queries drawn from one random vocabulary; each query's qrels is a random page."""
    rng = np.random.default_rng(seed)
    vocab = _pseudo_words(rng, vocabulary, set())
    page_texts = []
    for i in range(num_pages):
        n = int(rng.integers(tokens_per_page[0], tokens_per_page[1] + 1))
        page_texts.append((PageId(corpus_id, i), " ".join(rng.choice(vocab, size=n))))
    queries = []
    qrels = {}
    for j in range(num_queries):
        n = int(rng.integers(query_tokens[0], query_tokens[1] + 1))
        qid = f"r{j:03d}"
        queries.append((qid, " ".join(rng.choice(vocab, size=n))))
        qrels[qid] = frozenset({PageId(corpus_id, int(rng.integers(num_pages)))})
    return SyntheticCorpus(corpus_id, tuple(page_texts), tuple(queries), qrels)
