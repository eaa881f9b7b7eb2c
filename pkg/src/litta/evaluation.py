"""Page-level retrieval metrics and the experiment harness.

Relevance is binary: a page is either in a query's gold set or not. NDCG@10
therefore uses gain 1 for gold pages and the ideal ordering packs
``min(|gold|, 10)`` gold pages at the top.

Run files use the tab-separated layout
``query_id  page_id  rank  score  run_tag`` with one line per retrieved page.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import PageId, RankedList, RetrievalConfig, parse_page_id
from .index import EmbeddingIndex
from .pipeline import Providers, RetrievalResult, retrieve

log = logging.getLogger(__name__)

HIT_CUTOFFS = tuple(range(1, 11))
RECALL_CUTOFFS = (5, 10)
MRR_CUTOFF = 10

Qrels = Mapping[str, frozenset[PageId]]


class DataFormatError(ValueError):
    def __init__(self, path: str | os.PathLike, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number


class QrelsValidationError(ValueError):
    def __init__(self, missing: Sequence[tuple[str, PageId]]):
        listed = ", ".join(f"{q}->{p}" for q, p in missing)
        super().__init__(f"{len(missing)} gold page(s) not in the index: {listed}")
        self.missing = list(missing)


def _ids(ranking: RankedList | Sequence[PageId]) -> list[PageId]:
    if isinstance(ranking, RankedList):
        return ranking.page_ids
    return list(ranking)


def hit_at_k(ranking, gold: Iterable[PageId], k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    gold = set(gold)
    return int(any(p in gold for p in _ids(ranking)[:k]))


def recall_at_k(ranking, gold: Iterable[PageId], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    gold = set(gold)
    if not gold:
        raise ValueError("recall is undefined for an empty gold set")
    return len(gold.intersection(_ids(ranking)[:k])) / len(gold)


def mrr_at_k(ranking, gold: Iterable[PageId], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    gold = set(gold)
    for rank, page_id in enumerate(_ids(ranking)[:k], start=1):
        if page_id in gold:
            return 1.0 / rank
    return 0.0


def ndcg_at_k(ranking, gold: Iterable[PageId], k: int = 10) -> float:
    gold = set(gold)
    if not gold:
        raise ValueError("NDCG is undefined for an empty gold set")
    dcg = math.fsum(1.0 / math.log2(i + 1) for i, p in enumerate(_ids(ranking)[:k], start=1) if p in gold)
    ideal = math.fsum(1.0 / math.log2(i + 1) for i in range(1, min(len(gold), k) + 1))
    return dcg / ideal


def ndcg_at_10(ranking, gold: Iterable[PageId]) -> float:
    return ndcg_at_k(ranking, gold, 10)


def query_metrics(ranking, gold: Iterable[PageId]) -> dict[str, float]:
    gold = frozenset(gold)
    ids = _ids(ranking)
    out: dict[str, float] = {}
    for k in HIT_CUTOFFS:
        out[f"hit@{k}"] = float(hit_at_k(ids, gold, k))
    for k in RECALL_CUTOFFS:
        out[f"recall@{k}"] = recall_at_k(ids, gold, k)
    out[f"mrr@{MRR_CUTOFF}"] = mrr_at_k(ids, gold, MRR_CUTOFF)
    out["ndcg@10"] = ndcg_at_10(ids, gold)
    return out


@dataclass
class MetricReport:
    per_query: dict[str, dict[str, float]]
    mean: dict[str, float]
    num_queries: int
    failed: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def num_failed(self) -> int:
        return len(self.failed)

    def hit_curve(self) -> list[tuple[int, float]]:
        return [(k, self.mean.get(f"hit@{k}", 0.0)) for k in HIT_CUTOFFS]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "num_queries": self.num_queries,
            "num_evaluated": len(self.per_query),
            "num_failed": self.num_failed,
            "failed": list(self.failed),
            "mean": self.mean,
            "per_query": self.per_query,
        }


def evaluate_rankings(
    rankings: Mapping[str, Sequence[PageId]],
    qrels: Qrels,
    query_ids: Sequence[str] | None = None,
    config: dict | None = None,
) -> MetricReport:
    """Score rankings against qrels; queries in ``query_ids`` without a ranking count as failed."""
    if query_ids is None:
        query_ids = [q for q in qrels if q in rankings]
    per_query: dict[str, dict[str, float]] = {}
    failed: list[str] = []
    for qid in query_ids:
        if qid not in qrels:
            continue
        if qid not in rankings:
            failed.append(qid)
            continue
        per_query[qid] = query_metrics(rankings[qid], qrels[qid])
    mean: dict[str, float] = {}
    if per_query:
        names = next(iter(per_query.values())).keys()
        for name in names:
            mean[name] = math.fsum(m[name] for m in per_query.values()) / len(per_query)
    return MetricReport(
        per_query=per_query,
        mean=mean,
        num_queries=len(per_query) + len(failed),
        failed=failed,
        config=dict(config or {}),
    )


# -- file formats ------------------------------------------------------------


def load_queries(path: str | os.PathLike) -> list[tuple[str, str]]:
    """JSONL with ``query_id`` and ``text`` per line."""
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DataFormatError(path, n, f"invalid JSON: {exc}") from None
            if not isinstance(obj, dict) or not isinstance(obj.get("query_id"), str) or not isinstance(obj.get("text"), str):
                raise DataFormatError(path, n, "expected an object with string 'query_id' and 'text'")
            if obj["query_id"] in seen:
                raise DataFormatError(path, n, f"duplicate query_id {obj['query_id']!r}")
            seen.add(obj["query_id"])
            out.append((obj["query_id"], obj["text"]))
    return out


def load_qrels(path: str | os.PathLike) -> dict[str, frozenset[PageId]]:
    """TSV ``query_id <TAB> page_id``, one gold pair per line."""
    gathered: dict[str, set[PageId]] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0]:
                raise DataFormatError(path, n, f"expected 'query_id<TAB>page_id', got {line!r}")
            try:
                page_id = parse_page_id(fields[1])
            except ValueError as exc:
                raise DataFormatError(path, n, str(exc)) from None
            gathered.setdefault(fields[0], set()).add(page_id)
    return {q: frozenset(p) for q, p in gathered.items()}


def validate_qrels(qrels: Qrels, index: EmbeddingIndex) -> None:
    missing = [(q, p) for q, pages in qrels.items() for p in sorted(pages) if p not in index]
    if missing:
        raise QrelsValidationError(missing)


def format_run_lines(results: Iterable[tuple[str, RankedList]], run_tag: str) -> list[str]:
    lines = []
    for qid, ranked in results:
        for rank, (page_id, score) in enumerate(ranked, start=1):
            lines.append(f"{qid}\t{page_id}\t{rank}\t{score!r}\t{run_tag}")
    return lines


def write_run(path: str | os.PathLike, results: Iterable[tuple[str, RankedList]], run_tag: str) -> None:
    lines = format_run_lines(results, run_tag)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_run(path: str | os.PathLike) -> dict[str, list[PageId]]:
    """Read a run file back into per-query page lists ordered by rank."""
    rows: dict[str, list[tuple[int, PageId]]] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise DataFormatError(path, n, "expected 5 tab-separated fields")
            try:
                rows.setdefault(fields[0], []).append((int(fields[2]), parse_page_id(fields[1])))
            except ValueError as exc:
                raise DataFormatError(path, n, str(exc)) from None
    return {q: [p for _, p in sorted(r, key=lambda x: x[0])] for q, r in rows.items()}


# -- experiments -------------------------------------------------------------


def config_label(cfg: RetrievalConfig) -> str:
    return f"q{cfg.num_queries}-k{cfg.per_variant_depth}-K{cfg.final_k}-rrf{cfg.rrf_constant:g}-s{cfg.shortlist_size}"


@dataclass
class ExperimentOutput:
    config: RetrievalConfig
    label: str
    report: MetricReport
    results: dict[str, RetrievalResult]
    directory: Path

    @property
    def run_path(self) -> Path:
        return self.directory / "run.tsv"


def run_experiment(
    index: EmbeddingIndex,
    queries: Sequence[tuple[str, str]],
    qrels: Qrels,
    configs: Sequence[RetrievalConfig],
    out_dir: str | os.PathLike,
    providers: Providers,
    *,
    max_workers: int = 1,
) -> list[ExperimentOutput]:
    """Retrieve every judged query under each config and write the artifacts.

    Per config, ``out_dir/<label>/`` receives ``run.tsv``, ``per_query.tsv``,
    ``metrics.json`` and ``hit_curve.tsv``. Queries without qrels are skipped;
    queries whose retrieval raises are recorded as failed.
    """
    validate_qrels(qrels, index)
    judged = [(q, text) for q, text in queries if q in qrels]
    if len(judged) < len(queries):
        log.warning("skipping %d queries that have no qrels", len(queries) - len(judged))
    out_root = Path(out_dir)
    outputs = []
    for cfg in configs:
        label = config_label(cfg)
        directory = out_root / label
        directory.mkdir(parents=True, exist_ok=True)
        results: dict[str, RetrievalResult] = {}
        for qid, text in judged:
            try:
                results[qid] = retrieve(qid, text, index, cfg, providers, max_workers=max_workers)
            except Exception as exc:  # recorded, excluded from means
                log.warning("query %s failed under %s: %s", qid, label, exc)
        ordered = [(qid, results[qid].final) for qid, _ in judged if qid in results]
        write_run(directory / "run.tsv", ordered, label)
        report = evaluate_rankings(
            {qid: r.final.page_ids for qid, r in results.items()},
            qrels,
            [qid for qid, _ in judged],
            config={"label": label, **cfg.to_dict()},
        )
        _write_report(directory, report)
        outputs.append(ExperimentOutput(cfg, label, report, results, directory))
    return outputs


def _write_report(directory: Path, report: MetricReport) -> None:
    (directory / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    names = list(next(iter(report.per_query.values())).keys()) if report.per_query else []
    lines = ["query_id\tstatus\t" + "\t".join(names)]
    for qid, metrics in report.per_query.items():
        lines.append(f"{qid}\tok\t" + "\t".join(repr(metrics[n]) for n in names))
    for qid in report.failed:
        lines.append(f"{qid}\tfailed" + "\t" * len(names))
    (directory / "per_query.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    curve = ["k\tmean_hit"] + [f"{k}\t{v!r}" for k, v in report.hit_curve()]
    (directory / "hit_curve.tsv").write_text("\n".join(curve) + "\n", encoding="utf-8")
