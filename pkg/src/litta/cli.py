"""Command-line entry point: ``litta build-index | search | expand | evaluate``.

Exit codes: 0 success, 2 validation or configuration error, 3 I/O error,
4 provider failure on the original query.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from .config import ConfigError, build_providers, load_settings, render_settings, retrieval_config
from .core import PageEmbedding, parse_page_id
from .evaluation import DataFormatError, QrelsValidationError, load_qrels, load_queries, run_experiment
from .expansion import EmptyQueryError, expand
from .index import (
    DimensionMismatchError,
    IndexBuildError,
    IndexFileError,
    IngestFormatError,
    build_index,
    load_index,
    read_ingest,
    save_index,
)
from .pipeline import retrieve
from .providers import ProviderError
from .scoring import stats_snapshot

log = logging.getLogger("litta")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_PROVIDER = 4

PAGE_BATCH = 16


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _settings_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    g = parent.add_argument_group("configuration")
    g.add_argument("--config", help="TOML config file (default: $LITTA_CONFIG)")
    g.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    g.add_argument("--provider", help="embedding provider: hash or http")
    g.add_argument("--seed", type=int, dest="hash_seed", help="hash embedder seed")
    g.add_argument("--dim", type=int, dest="hash_dim", help="hash embedder dimension")
    g.add_argument("--embed-endpoint", help="embedding service URL")
    g.add_argument("--expand-endpoint", help="query expansion service URL")
    g.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    return parent


def _retrieval_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    g = parent.add_argument_group("retrieval")
    g.add_argument("--depth", type=int, help="per-variant candidate depth k")
    g.add_argument("--topk", type=int, help="fused pages returned, K")
    g.add_argument("--rrf-k", type=float, dest="rrf_k", help="RRF constant")
    g.add_argument("--shortlist", type=int, help="centroid shortlist size per variant")
    return parent


def build_parser() -> argparse.ArgumentParser:
    settings = _settings_parent()
    retrieval = _retrieval_parent()
    parser = argparse.ArgumentParser(prog="litta", description="Multi-query late-interaction page retrieval.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", parents=[settings], help="build an index file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--embeddings", help="ingestion TSV: page_id, M, d, base64 f32 matrix")
    src.add_argument("--pages", help="JSONL pages manifest with page_id and text, embedded by the provider")
    p.add_argument("--out", required=True, help="output index path")

    p = sub.add_parser("search", parents=[settings, retrieval], help="retrieve pages for one query")
    p.add_argument("index")
    p.add_argument("query")
    p.add_argument("--q", type=int, dest="num_queries", help="number of query variants Q")
    p.add_argument("--stats", action="store_true", help="append evaluation counts and stage timings")
    p.add_argument("--json", action="store_true", help="emit JSON with per-variant detail")

    p = sub.add_parser("expand", parents=[settings], help="print the query variants")
    p.add_argument("query")
    p.add_argument("--q", type=int, dest="num_queries", help="number of query variants Q")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("evaluate", parents=[settings, retrieval], help="run an experiment grid")
    p.add_argument("index")
    p.add_argument("queries", help="JSONL queries file")
    p.add_argument("qrels", help="TSV qrels file")
    p.add_argument("--grid", default="1,3,5", help="comma-separated Q values (default 1,3,5)")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "provider": get("provider"),
        "hash.seed": get("hash_seed"),
        "hash.dim": get("hash_dim"),
        "embed.endpoint": get("embed_endpoint"),
        "expand.endpoint": get("expand_endpoint"),
        "retrieval.num_queries": get("num_queries"),
        "retrieval.per_variant_depth": get("depth"),
        "retrieval.final_k": get("topk"),
        "retrieval.rrf_constant": get("rrf_k"),
        "retrieval.shortlist_size": get("shortlist"),
    }


def _load_index(path: str):
    try:
        return load_index(path)
    except (OSError, IndexFileError) as exc:
        raise CliError(f"cannot load index {path}: {exc}", EXIT_IO) from None


def _iter_manifest_pages(path: str, embedder):
    batch: list[tuple] = []

    def flush():
        matrices = embedder.embed_pages([text for _, text in batch])
        for (page_id, _), m in zip(batch, matrices):
            yield PageEmbedding(page_id, m)
        batch.clear()

    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                batch.append((parse_page_id(obj["page_id"]), str(obj["text"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(path, n, f"bad page record: {exc}") from None
            if len(batch) >= PAGE_BATCH:
                yield from flush()
    if batch:
        yield from flush()


def cmd_build_index(args, settings) -> int:
    if args.embeddings:
        try:
            fh = open(args.embeddings, encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read {args.embeddings}: {exc}", EXIT_IO) from None
        with fh:
            index = build_index(read_ingest(fh))
    else:
        providers = build_providers(settings)
        try:
            index = build_index(_iter_manifest_pages(args.pages, providers.embedder))
        except OSError as exc:
            raise CliError(f"cannot read {args.pages}: {exc}", EXIT_IO) from None
    try:
        size = save_index(index, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    print(f"pages={len(index)} dim={index.dim} vectors={index.total_vectors} bytes={size} path={args.out}")
    return EXIT_OK


def cmd_search(args, settings) -> int:
    cfg = retrieval_config(settings)
    providers = build_providers(settings)
    index = _load_index(args.index)
    if not args.query.strip():
        raise CliError("query is empty", EXIT_VALIDATION)
    before = stats_snapshot()
    result = retrieve("cli", args.query, index, cfg, providers)
    if args.json:
        print(json.dumps(result.to_dict(include_timings=args.stats), indent=2))
        return EXIT_OK
    for rank, (page_id, score) in enumerate(result.final, start=1):
        print(f"{rank}\t{page_id}\t{score!r}")
    if args.stats:
        after = stats_snapshot()
        print(f"# maxsim_evaluations={result.stats.maxsim_evaluations}")
        print(f"# dot_products={result.stats.dot_products}")
        print(f"# candidates_per_variant={','.join(map(str, result.stats.candidates_per_variant))}")
        print(f"# process_maxsim_evaluations={after['maxsim_evaluations'] - before['maxsim_evaluations']}")
        for stage, seconds in result.stats.stage_times_s.items():
            print(f"# time_{stage}_s={seconds:.6f}")
        print(f"# wall_time_s={result.stats.wall_time_s:.6f}")
    return EXIT_OK


def cmd_expand(args, settings) -> int:
    cfg = retrieval_config(settings)
    providers = build_providers(settings)
    variants = expand(args.query, cfg, providers.generator, stopwords=providers.stopwords)
    if args.json:
        print(json.dumps(variants.to_dict(), indent=2, ensure_ascii=False))
        return EXIT_OK
    for i, (text, tag) in enumerate(zip(variants.variants, variants.provenance)):
        print(f"{i}\t{tag.value}\t{text}")
    return EXIT_OK


def _parse_grid(grid: str) -> list[int]:
    try:
        values = [int(part) for part in grid.split(",") if part.strip()]
    except ValueError:
        raise CliError(f"--grid expects comma-separated integers, got {grid!r}", EXIT_VALIDATION) from None
    if not values:
        raise CliError("--grid is empty", EXIT_VALIDATION)
    return values


def cmd_evaluate(args, settings) -> int:
    grid = _parse_grid(args.grid)
    configs = [retrieval_config({**settings, "retrieval.num_queries": q}) for q in grid]
    providers = build_providers(settings)
    index = _load_index(args.index)
    try:
        queries = load_queries(args.queries)
        qrels = load_qrels(args.qrels)
    except OSError as exc:
        raise CliError(f"cannot read evaluation inputs: {exc}", EXIT_IO) from None
    try:
        outputs = run_experiment(index, queries, qrels, configs, args.out, providers)
    except OSError as exc:
        raise CliError(f"cannot write results to {args.out}: {exc}", EXIT_IO) from None
    print("config\tNDCG@10\tR@5\tR@10\tMRR@10\tqueries\tfailed")
    for out in outputs:
        m = out.report.mean
        cols = [m.get(name, 0.0) for name in ("ndcg@10", "recall@5", "recall@10", "mrr@10")]
        print(out.label + "\t" + "\t".join(f"{v:.4f}" for v in cols) + f"\t{out.report.num_queries}\t{out.report.num_failed}")
    return EXIT_OK


COMMANDS = {
    "build-index": cmd_build_index,
    "search": cmd_search,
    "expand": cmd_expand,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = load_settings(args.config, _overrides(args))
        if args.print_config:
            sys.stdout.write(render_settings(settings))
            return EXIT_OK
        return COMMANDS[args.command](args, settings)
    except CliError as exc:
        print(f"litta: {exc}", file=sys.stderr)
        return exc.code
    except ProviderError as exc:
        print(f"litta: provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (
        ConfigError,
        EmptyQueryError,
        DimensionMismatchError,
        IndexBuildError,
        IngestFormatError,
        DataFormatError,
        QrelsValidationError,
    ) as exc:
        print(f"litta: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"litta: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"litta: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
