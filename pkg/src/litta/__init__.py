"""Multi-query late-interaction page retrieval with reciprocal rank fusion."""

from .core import PageEmbedding, PageId, QueryTokens, RankedList, RetrievalConfig, parse_page_id
from .evaluation import hit_at_k, mrr_at_k, ndcg_at_10, recall_at_k, run_experiment
from .expansion import VariantSet, deterministic_fallback, expand
from .fusion import FusedRanking, rerank_hook, rrf_fuse
from .index import EmbeddingIndex, build_index, load_index, save_index, shortlist
from .pipeline import Providers, RetrievalResult, answer_stub, retrieve
from .providers import HashEmbedder, HttpEmbedder, HttpExpander, hash_embed
from .scoring import maxsim, score_candidates

__version__ = "0.1.0"

__all__ = [
    "EmbeddingIndex",
    "FusedRanking",
    "HashEmbedder",
    "HttpEmbedder",
    "HttpExpander",
    "PageEmbedding",
    "PageId",
    "Providers",
    "QueryTokens",
    "RankedList",
    "RetrievalConfig",
    "RetrievalResult",
    "VariantSet",
    "answer_stub",
    "build_index",
    "deterministic_fallback",
    "expand",
    "hash_embed",
    "hit_at_k",
    "load_index",
    "maxsim",
    "mrr_at_k",
    "ndcg_at_10",
    "parse_page_id",
    "recall_at_k",
    "rerank_hook",
    "retrieve",
    "rrf_fuse",
    "run_experiment",
    "save_index",
    "score_candidates",
    "shortlist",
]
