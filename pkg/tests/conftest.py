import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from anisotv.generators import random_graph

settings.register_profile(
    "repro",
    derandomize=True,
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repro")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def two_vertex():
    from anisotv.graph import WeightedGraph

    return WeightedGraph.from_edges(2, [(0, 1)])


def small_graphs(seed, count, n_range=(2, 12)):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(*n_range))
        m = int(rng.integers(n - 1, n * (n - 1) // 2 + 1))
        out.append(random_graph(rng, n, m))
    return out
