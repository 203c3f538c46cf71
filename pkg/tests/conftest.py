import numpy as np
import pytest
from hypothesis import settings

from physgnn.graph import SparseGraph, random_connected_graph
from physgnn.tensor import make_rng

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return make_rng(1234)


def two_triangles() -> SparseGraph:
    return SparseGraph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])


def random_graphs(count, n_lo=3, n_hi=10, p=0.4, seed=0):
    rng = make_rng(seed)
    return [random_connected_graph(int(rng.integers(n_lo, n_hi + 1)), p, rng) for _ in range(count)]


def assert_close(a, b, tol):
    np.testing.assert_allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), atol=tol, rtol=0)
