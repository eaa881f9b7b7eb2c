"""Acceptance suite: one or more tests per criterion, tagged with its number.

A PASS/FAIL line per criterion is printed at the end of the pytest run.
"""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import closed_port_url
from oracles import brute_force_rrf, dcg_reference, naive_maxsim
from litta.cli import main
from litta.core import PageEmbedding, PageId, QueryTokens, RankedList, RetrievalConfig
from litta.evaluation import (
    evaluate_rankings,
    hit_at_k,
    mrr_at_k,
    ndcg_at_10,
    query_metrics,
    recall_at_k,
)
from litta.expansion import Provenance, content_words, load_stopwords
from litta.fusion import rrf_fuse
from litta.index import (
    IndexChecksumError,
    IndexFormatError,
    IndexTruncatedError,
    build_index,
    dumps_index,
    load_index,
    loads_index,
    save_index,
    shortlist,
)
from litta.pipeline import Providers, retrieve
from litta.providers import HashEmbedder, HttpExpander, hash_embed
from litta.scoring import batch_maxsim, score_candidates, stats_snapshot
from litta.synthetic import random_corpus, terminology_mismatch_corpus

from conftest import FIXED_TS

DIM = 64


# -- 1 -------------------------------------------------------------------------


@pytest.mark.acceptance(1, "batched MaxSim matches the naive oracle within 1e-6 over 1000 instances")
def test_maxsim_oracle_equivalence():
    rng = np.random.default_rng(20260101)
    engine_time = 0.0
    worst = 0.0
    started = time.perf_counter()
    for n in range(1000):
        d = int(rng.integers(1, 129))
        q = QueryTokens(0, "q", rng.standard_normal((int(rng.integers(1, 65)), d)))
        pages = [
            PageEmbedding(PageId("a", i), rng.standard_normal((int(rng.integers(1, 65)), d)))
            for i in range(int(rng.integers(1, 4)))
        ]
        t0 = time.perf_counter()
        totals = batch_maxsim(q, pages)
        engine_time += time.perf_counter() - t0
        for page, total in zip(pages, totals):
            expected, _ = naive_maxsim(q.vectors, page.vectors)
            worst = max(worst, abs(float(total) - expected))
    print(f"max abs error {worst:.3e}, engine {engine_time:.2f}s, total {time.perf_counter() - started:.2f}s")
    assert worst <= 1e-6
    assert engine_time < 10.0


# -- 2 -------------------------------------------------------------------------


@pytest.mark.acceptance(2, "RRF matches direct evaluation within 1e-12; hand fixture order and scores")
def test_rrf_oracle_equivalence():
    rng = np.random.default_rng(7)
    universe = [PageId("c", i) for i in range(120)]
    worst = 0.0
    for _ in range(1000):
        num_lists = int(rng.integers(1, 9))
        k_rrf = float(rng.choice([1.0, 10.0, 60.0, float(rng.uniform(0.5, 100))]))
        lists = []
        for v in range(num_lists):
            length = int(rng.integers(0, 51))
            ids = [universe[i] for i in rng.choice(len(universe), size=length, replace=False)]
            scores = np.sort(rng.standard_normal(length))[::-1]
            lists.append(RankedList.for_variant(v, list(zip(ids, scores.tolist()))))
        fused = rrf_fuse(lists, k_rrf)
        oracle = brute_force_rrf([lst.page_ids for lst in lists], k_rrf)
        assert {e.page_id for e in fused.entries} == set(oracle)
        for e in fused.entries:
            worst = max(worst, abs(e.rrf_score - oracle[e.page_id]))
        scores = [e.rrf_score for e in fused.entries]
        assert scores == sorted(scores, reverse=True)
    assert worst <= 1e-12


@pytest.mark.acceptance(2, "RRF matches direct evaluation within 1e-12; hand fixture order and scores")
def test_rrf_hand_fixture():
    p1, p2, p3 = PageId("x", 1), PageId("x", 2), PageId("x", 3)
    a = RankedList.for_variant(0, [(p1, 0.9), (p2, 0.8)])
    b = RankedList.for_variant(1, [(p2, 0.7), (p3, 0.6)])
    fused = rrf_fuse([a, b], 60.0)
    assert [e.page_id for e in fused.entries] == [p2, p1, p3]
    expected = [1 / 62 + 1 / 61, 1 / 61, 1 / 62]
    for e, want in zip(fused.entries, expected):
        assert abs(e.rrf_score - want) <= 1e-12


# -- 3 -------------------------------------------------------------------------

_ids = st.lists(st.integers(0, 60), min_size=0, max_size=30, unique=True)


@st.composite
def scaled_lists(draw):
    lists = []
    for v in range(draw(st.integers(1, 6))):
        ids = draw(_ids)
        raw = sorted(draw(st.lists(st.floats(-1e6, 1e6), min_size=len(ids), max_size=len(ids))), reverse=True)
        lists.append((v, [PageId("s", i) for i in ids], raw))
    factors = draw(st.lists(st.floats(1e-9, 1e9), min_size=len(lists), max_size=len(lists)))
    return lists, factors


@pytest.mark.acceptance(3, "positive rescaling of any input list leaves fused ordering byte-identical")
@settings(max_examples=600, deadline=None)
@given(scaled_lists(), st.sampled_from([1.0, 60.0]))
def test_rank_scale_invariance(case, k_rrf):
    lists, factors = case
    base = [RankedList.for_variant(v, list(zip(ids, raw))) for v, ids, raw in lists]
    scaled = [RankedList.for_variant(v, [(p, s * c) for p, s in zip(ids, raw)]) for (v, ids, raw), c in zip(lists, factors)]
    a = rrf_fuse(base, k_rrf).to_ranked_list()
    b = rrf_fuse(scaled, k_rrf).to_ranked_list()
    assert repr(a.entries).encode() == repr(b.entries).encode()


# -- 4 -------------------------------------------------------------------------


@pytest.mark.acceptance(4, "metric fixtures, monotonicity, oracles and mean aggregation")
def test_metric_fixtures():
    P = [PageId("m", i) for i in range(20)]
    assert mrr_at_k([P[4], P[5], P[0]], {P[0]}, 3) == 1 / 3
    assert mrr_at_k([P[4], P[5], P[0]], {P[0]}, 2) == 0.0
    assert mrr_at_k([P[0]], {P[0]}, 10) == 1.0
    value = ndcg_at_10([P[1], P[0]], {P[0]})
    assert abs(value - 1 / math.log2(3)) <= 1e-12
    assert abs(value - 0.6309297535714575) <= 1e-12
    assert ndcg_at_10([P[0], P[1]], {P[0]}) == 1.0

    rng = np.random.default_rng(3)
    rankings, qrels = {}, {}
    for n in range(300):
        ranking = [P[i] for i in rng.permutation(20)[: int(rng.integers(0, 21))]]
        gold = {P[i] for i in rng.choice(20, size=int(rng.integers(1, 8)), replace=False)}
        hits = [hit_at_k(ranking, gold, k) for k in range(1, 11)]
        assert all(x <= y for x, y in zip(hits, hits[1:]))
        for k in (1, 5, 10):
            assert recall_at_k(ranking, gold, k) == len(set(ranking[:k]) & gold) / len(gold)
        assert abs(ndcg_at_10(ranking, gold) - dcg_reference(ranking, gold)) <= 1e-12
        rankings[f"q{n}"], qrels[f"q{n}"] = ranking, frozenset(gold)

    report = evaluate_rankings(rankings, qrels)
    for name, mean in report.mean.items():
        values = [query_metrics(rankings[q], qrels[q])[name] for q in rankings]
        assert abs(mean - sum(values) / len(values)) <= 1e-12


# -- 5 -------------------------------------------------------------------------


@pytest.mark.acceptance(5, "MaxSim evaluation counts are exactly {1,3,5} x 100 with shortlist = corpus")
def test_complexity_contract():
    corpus = random_corpus(100, seed=21, num_queries=5)
    emb = HashEmbedder(DIM, 0)
    index = corpus.build_index(emb)
    providers = Providers(emb)
    for qid, text in corpus.queries:
        measured = {}
        for q in (1, 3, 5):
            cfg = RetrievalConfig(num_queries=q, shortlist_size=100)
            before = stats_snapshot()["maxsim_evaluations"]
            result = retrieve(qid, text, index, cfg, providers)
            measured[q] = stats_snapshot()["maxsim_evaluations"] - before
            assert result.stats.maxsim_evaluations == measured[q]
            assert len(result.variant_set) == q
        assert measured == {1: 100, 3: 300, 5: 500}


# -- 6 -------------------------------------------------------------------------


@pytest.mark.acceptance(6, "retrieve(Q=1) equals score_candidates on the original, truncated to K")
def test_single_query_equivalence():
    rng = np.random.default_rng(6)
    emb = HashEmbedder(DIM, 0)
    for seed in range(120):
        n = int(rng.integers(3, 60))
        corpus = random_corpus(n, seed=seed, num_queries=2, vocabulary=int(rng.integers(20, 200)))
        index = corpus.build_index(emb)
        depth = int(rng.integers(1, n + 1))
        size = n if seed % 2 else int(rng.integers(depth, n + 1))
        final_k = int(rng.integers(1, 2 * depth + 1))
        cfg = RetrievalConfig(num_queries=1, per_variant_depth=depth, final_k=final_k, shortlist_size=size)
        for qid, text in corpus.queries:
            got = retrieve(qid, text, index, cfg, Providers(emb)).final
            query = QueryTokens(0, text, hash_embed(text, DIM, 0))
            candidates = shortlist(index, query, size).page_ids
            if size == n:
                assert sorted(candidates) == sorted(index.page_ids)
            expected = score_candidates(query, index, candidates, depth).truncate(final_k)
            assert got.page_ids == expected.page_ids


# -- 7 -------------------------------------------------------------------------


def _mismatch_run():
    corpus = terminology_mismatch_corpus(num_pages=50, num_queries=20, seed=0)
    emb = HashEmbedder(DIM, 0)
    index = corpus.build_index(emb)
    providers = Providers(emb)
    out = {}
    for q in (1, 3, 5):
        cfg = RetrievalConfig(num_queries=q)
        results = {qid: retrieve(qid, text, index, cfg, providers) for qid, text in corpus.queries}
        out[q] = results
    return corpus, out


@pytest.mark.acceptance(7, "terminology-mismatch corpus: Q=3 beats Q=1 on Recall@10 and Hit@5, pool monotone")
def test_synthetic_multi_query_gain():
    started = time.perf_counter()
    corpus, runs = _mismatch_run()
    assert len(corpus.page_texts) == 50 and len(corpus.queries) == 20
    texts = dict(corpus.page_texts)
    stopwords = load_stopwords()

    # gold pages share no token with the original query, only with its fallbacks
    for qid, text in corpus.queries:
        [gold] = corpus.qrels[qid]
        page_tokens = set(texts[gold].split())
        assert not page_tokens & set(text.split())
        variants = runs[3][qid].variant_set
        assert variants.provenance == (Provenance.ORIGINAL, Provenance.FALLBACK, Provenance.FALLBACK)
        assert set(content_words(text, stopwords)) <= page_tokens
        assert all(page_tokens & set(v.split()) for v in variants.variants[1:])

    means = {}
    for q, results in runs.items():
        report = evaluate_rankings({qid: r.final.page_ids for qid, r in results.items()}, corpus.qrels)
        means[q] = report.mean
    print({q: (m["recall@10"], m["hit@5"]) for q, m in means.items()})
    assert means[3]["recall@10"] > means[1]["recall@10"]
    assert means[3]["hit@5"] > means[1]["hit@5"]

    for qid, _ in corpus.queries:
        pools = [set().union(*(lst.page_ids for lst in runs[q][qid].per_variant)) for q in (1, 3, 5)]
        assert pools[0] <= pools[1] <= pools[2]
    gold_coverage = [
        sum(bool(corpus.qrels[qid] & set().union(*(lst.page_ids for lst in runs[q][qid].per_variant))) for qid, _ in corpus.queries)
        for q in (1, 3, 5)
    ]
    assert gold_coverage == sorted(gold_coverage)

    _, again = _mismatch_run()
    for q in runs:
        for qid in runs[q]:
            assert runs[q][qid].to_dict(include_timings=False) == again[q][qid].to_dict(include_timings=False)
    assert time.perf_counter() - started < 30.0


# -- 8 -------------------------------------------------------------------------


@pytest.mark.acceptance(8, "byte-identical evaluate runs, bit-identical index round trip, distinct corruption errors")
def test_evaluate_runs_are_byte_identical(tmp_path, monkeypatch):
    for name in ("LITTA_CONFIG", "LITTA_HASH_SEED", "LITTA_HASH_DIM", "LITTA_PROVIDER", "LITTA_EXPAND_ENDPOINT"):
        monkeypatch.delenv(name, raising=False)
    corpus = terminology_mismatch_corpus(seed=4)
    paths = corpus.write(tmp_path / "data")
    index = tmp_path / "m.idx"
    assert main(["build-index", "--pages", str(paths["pages"]), "--out", str(index), "--seed", "5"]) == 0
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = ["evaluate", str(index), str(paths["queries"]), str(paths["qrels"]), "--seed", "5", "--out", str(out)]
        assert main(argv) == 0
        runs.append(sorted(out.glob("*/run.tsv")))
    assert len(runs[0]) == 3
    for a, b in zip(*runs):
        assert a.relative_to(tmp_path / "a") == b.relative_to(tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()


@pytest.mark.acceptance(8, "byte-identical evaluate runs, bit-identical index round trip, distinct corruption errors")
def test_index_round_trip_and_corruption(tmp_path):
    rng = np.random.default_rng(8)
    pages = [PageEmbedding(PageId("r", i), rng.standard_normal((int(rng.integers(1, 9)), 16))) for i in range(10)]
    index = build_index(pages, created_at=FIXED_TS)
    path = tmp_path / "r.idx"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded == index
    for original, restored in zip(index.pages, loaded.pages):
        assert original.vectors.tobytes() == restored.vectors.tobytes()
    data = path.read_bytes()
    assert dumps_index(loaded) == data

    raised = []
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    for corrupt, error in [
        (b"NOTANIDX" + data[8:], IndexFormatError),
        (data[: len(data) - 40], IndexTruncatedError),
        (bytes(flipped), IndexChecksumError),
    ]:
        with pytest.raises(error) as exc:
            loads_index(corrupt)
        raised.append(type(exc.value))
    assert len(set(raised)) == 3
    for a in raised:
        for b in raised:
            assert a is b or not issubclass(a, b)


# -- 9 -------------------------------------------------------------------------


@pytest.mark.acceptance(9, "unreachable expansion endpoint: fallbacks, exit 0, exactly Q variants")
def test_degradation_path(capsys, monkeypatch):
    for name in ("LITTA_CONFIG", "LITTA_PROVIDER", "LITTA_RETRIEVAL_NUM_QUERIES"):
        monkeypatch.delenv(name, raising=False)
    url = closed_port_url()
    query = "What is the maximum operating pressure of the hydraulic pump?"
    for q in (1, 2, 3, 5):
        capsys.readouterr()
        assert main(["expand", query, "--q", str(q), "--expand-endpoint", url]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == q
        assert [line.split("\t")[1] for line in lines] == ["original"] + ["fallback"] * (q - 1)

    corpus = terminology_mismatch_corpus()
    emb = HashEmbedder(DIM, 0)
    index = corpus.build_index(emb)
    providers = Providers(emb, HttpExpander(url, timeout_s=2.0))
    for q in (1, 3, 5):
        result = retrieve("q", corpus.queries[0][1], index, RetrievalConfig(num_queries=q), providers)
        assert len(result.variant_set) == q
        assert result.variant_set.provenance[1:] == (Provenance.FALLBACK,) * (q - 1)
        assert len(result.final) > 0
