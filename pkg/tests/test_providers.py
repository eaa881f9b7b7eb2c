import json

import httpx
import numpy as np
import pytest

from conftest import closed_port_url
from litta.providers import (
    CardinalityError,
    DimensionInconsistencyError,
    EmbedRequest,
    HashEmbedder,
    HttpEmbedder,
    HttpExpander,
    MalformedResponseError,
    ProviderStatusError,
    ProviderTransportError,
    fnv1a_64,
    hash_embed,
    http_embed,
    http_expand,
    splitmix64,
)

URL = "http://encoder.test/embed"


def client_for(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


# -- hash embedder -----------------------------------------------------------


def test_published_hash_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8
    assert splitmix64(0, 3) == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_hash_embed_rows():
    m = hash_embed("pump valve pump", 16, seed=3)
    assert m.shape == (3, 16) and m.dtype == np.float32
    assert np.array_equal(m[0], m[2])
    np.testing.assert_allclose(np.linalg.norm(m, axis=1), 1.0, atol=1e-6)


def test_hash_embed_token_local():
    ab, ba = hash_embed("a b", 8), hash_embed("b a", 8)
    assert np.array_equal(ab, ba[::-1])


def test_hash_embed_seed_and_dim_matter():
    assert not np.array_equal(hash_embed("x", 8, 0), hash_embed("x", 8, 1))
    assert hash_embed("x", 9).shape == (1, 9)


def test_hash_embed_matches_written_procedure():
    # recompute component-by-component from the documented recipe
    token, d, seed = "pump", 6, 11
    state = fnv1a_64(token.encode()) ^ ((seed * 0x9E3779B97F4A7C15) % 2**64)
    raw = [2 * ((z >> 11) / 2**53) - 1 for z in splitmix64(state, d)]
    norm = sum(c * c for c in raw) ** 0.5
    expected = np.array([c / norm for c in raw], dtype=np.float32)
    assert hash_embed(token, d, seed)[0].tobytes() == expected.tobytes()


def test_near_orthogonality_sample():
    tokens = [f"tok{i}" for i in range(2000)]
    m = hash_embed(" ".join(tokens), 64, 0).astype(np.float64)
    cos = np.abs(np.sum(m[0::2] * m[1::2], axis=1))
    assert len(cos) == 1000
    assert cos.max() < 0.5


def test_hash_embed_errors():
    with pytest.raises(ValueError):
        hash_embed("   ", 8)
    with pytest.raises(ValueError):
        hash_embed("x", 1)


def test_hash_embedder_interface():
    e = HashEmbedder(dim=8, seed=2)
    (q,) = e.embed_queries(["a b"])
    (p,) = e.embed_pages(["a b"])
    assert np.array_equal(q, p)


# -- http embed --------------------------------------------------------------


def test_embed_echo_round_trip():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["headers"] = request.headers
        mat = [[1, 2, 3, 4], [5, 6, 7, 8]]
        return httpx.Response(200, json={"embeddings": [mat, mat]})

    req = EmbedRequest("query", ("a", "b"))
    resp = http_embed(URL, req, client=client_for(handler), token="sekrit")
    assert len(resp.embeddings) == 2 and resp.dim == 4
    assert seen["body"] == {"mode": "query", "inputs": ["a", "b"]}
    assert seen["headers"]["authorization"] == "Bearer sekrit"
    assert seen["headers"]["x-request-id"] == req.request_id


def test_cardinality_error():
    handler = lambda r: httpx.Response(200, json={"embeddings": [[[1.0]], [[1.0]], [[1.0]]]})
    with pytest.raises(CardinalityError) as info:
        http_embed(URL, EmbedRequest("query", ("a", "b")), client=client_for(handler))
    assert info.value.endpoint == URL and info.value.request_id


def test_dimension_inconsistency():
    handler = lambda r: httpx.Response(200, json={"embeddings": [[[0.0] * 4], [[0.0] * 5]]})
    with pytest.raises(DimensionInconsistencyError):
        http_embed(URL, EmbedRequest("page", ("a", "b")), client=client_for(handler))


def test_malformed_body():
    handler = lambda r: httpx.Response(200, content=b"not json")
    with pytest.raises(MalformedResponseError):
        http_embed(URL, EmbedRequest("query", ("a",)), client=client_for(handler))
    handler = lambda r: httpx.Response(200, json={"vectors": []})
    with pytest.raises(MalformedResponseError):
        http_embed(URL, EmbedRequest("query", ("a",)), client=client_for(handler))


def test_status_error_after_one_retry():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    with pytest.raises(ProviderStatusError) as info:
        http_embed(URL, EmbedRequest("query", ("a",)), client=client_for(handler), backoff_s=0)
    assert info.value.status_code == 503
    assert len(calls) == 2


def test_retry_recovers():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectError("boom")
        return httpx.Response(200, json={"embeddings": [[[1.0, 0.0]]]})

    resp = http_embed(URL, EmbedRequest("query", ("a",)), client=client_for(handler), backoff_s=0)
    assert resp.dim == 2 and len(calls) == 2


def test_client_errors_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400)

    with pytest.raises(ProviderStatusError):
        http_embed(URL, EmbedRequest("query", ("a",)), client=client_for(handler), backoff_s=0)
    assert len(calls) == 1


def test_transport_failure_real_socket():
    with pytest.raises(ProviderTransportError):
        http_embed(closed_port_url(), EmbedRequest("query", ("a",)), retries=0, timeout_s=2)


def test_http_embedder_modes():
    modes = []

    def handler(request):
        body = json.loads(request.content)
        modes.append(body["mode"])
        return httpx.Response(200, json={"embeddings": [[[1.0, 2.0]] for _ in body["inputs"]]})

    e = HttpEmbedder(URL, client=client_for(handler))
    assert len(e.embed_queries(["a", "b"])) == 2
    e.embed_pages(["p"])
    assert modes == ["query", "page"]


def test_empty_request_rejected():
    with pytest.raises(ValueError):
        http_embed(URL, EmbedRequest("query", ()))
    with pytest.raises(ValueError):
        EmbedRequest("image", ("a",))


# -- http expand -------------------------------------------------------------


def test_expand_passthrough():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"variants": ["v1", "v2"]})

    out = http_expand(URL, "q", 2, prompt_template="T {query}", client=client_for(handler))
    assert out == ["v1", "v2"]
    assert seen["body"] == {"query": "q", "num_variants": 2, "prompt_template": "T {query}"}


def test_expand_status_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500)

    with pytest.raises(ProviderStatusError):
        http_expand(URL, "q", 2, client=client_for(handler))
    assert len(calls) == 1


def test_expand_duplicates_pass_through():
    handler = lambda r: httpx.Response(200, json={"variants": ["v1", "v1", "v2"]})
    assert HttpExpander(URL, client=client_for(handler)).generate("q", 3) == ["v1", "v1", "v2"]


def test_expand_rejects_bad_variants():
    handler = lambda r: httpx.Response(200, json={"variants": [1, 2]})
    with pytest.raises(MalformedResponseError):
        http_expand(URL, "q", 2, client=client_for(handler))
