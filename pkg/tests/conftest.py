import socket

import numpy as np
import pytest

from litta.core import PageEmbedding, PageId, QueryTokens
from litta.index import build_index

FIXED_TS = "2026-01-01T00:00:00+00:00"


def closed_port_url(path="/expand"):
    # bind then release, so nothing is listening there
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    return f"http://127.0.0.1:{port}{path}"


def random_pages(rng, n, dim, max_vectors=8, corpus="c"):
    return [
        PageEmbedding(PageId(corpus, i), rng.standard_normal((int(rng.integers(1, max_vectors + 1)), dim)))
        for i in range(n)
    ]


def random_query(rng, dim, max_tokens=6, variant_index=0):
    return QueryTokens(variant_index, "q", rng.standard_normal((int(rng.integers(1, max_tokens + 1)), dim)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_index(rng):
    return build_index(random_pages(rng, 12, 8), created_at=FIXED_TS)


# -- acceptance reporting ------------------------------------------------------

_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): test backing one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and not report.failed):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, [title, True])
    entry[1] = entry[1] and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
