import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from featprop.graph import build_graph

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_graph(rng, n, m, directed=True):
    edges = rng.integers(0, n, size=(m, 2))
    return build_graph(edges, n, directed=directed)


def feasible_w2(rng, d, colsum=0.9):
    """Nonnegative W2 whose largest column sum equals ``colsum``."""
    W = rng.random((d, d))
    return W * (colsum / W.sum(axis=0).max())


@st.composite
def graphs(draw, max_n=12, max_m=30, directed=None):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(0, max_m))
    edges = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=m, max_size=m))
    if directed is None:
        directed = draw(st.booleans())
    return build_graph(edges, n, directed=directed)


seeds = st.integers(0, 2**32 - 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fraud_ds():
    from featprop.data import generate_fraud_dataset

    return generate_fraud_dataset()


@pytest.fixture(scope="session")
def small_ds():
    from featprop.data import FraudGenConfig, generate_fraud_dataset

    cfg = FraudGenConfig(n_buyers=20, n_sellers=8, n_edges=120, fraud_rate=0.1, n_fraud_sellers=2, d=3, d_e=2)
    return generate_fraud_dataset(cfg)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line for the summary."""

    def record(n, ok, detail):
        _CRITERIA[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
