"""Seeded random instances: graphs, chains, grids and data.

Used by the test suite and the command line tool; every generator takes a
``numpy.random.Generator`` so instances are reproducible.
"""

from __future__ import annotations

import numpy as np

from anisotv.graph import WeightedGraph


def random_graph(rng, n_vertices, n_edges, weight_range=(0.1, 10.0), connected=True):
    """Random oriented graph without self-loops or anti-parallel pairs.

    With ``connected`` a random spanning tree is laid down first; the rest
    of the edges are uniform over the remaining vertex pairs.
    """
    n = int(n_vertices)
    max_edges = n * (n - 1) // 2
    m = min(int(n_edges), max_edges)
    keys = set()
    pairs = []

    def add(i, j):
        a, b = (i, j) if i < j else (j, i)
        k = a * n + b
        if i == j or k in keys:
            return False
        keys.add(k)
        pairs.append((i, j) if rng.random() < 0.5 else (j, i))
        return True

    if connected and n > 1:
        perm = rng.permutation(n)
        for k in range(1, n):
            add(int(perm[k]), int(perm[rng.integers(k)]))
    while len(pairs) < m:
        need = m - len(pairs)
        ii = rng.integers(n, size=2 * need + 8)
        jj = rng.integers(n, size=2 * need + 8)
        for i, j in zip(ii, jj):
            add(int(i), int(j))
            if len(pairs) >= m:
                break
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    lo, hi = weight_range
    w = rng.uniform(lo, hi, n)
    W = rng.uniform(lo, hi, len(edges))
    return WeightedGraph(edges[:, 0], edges[:, 1], w, W)


def random_chain(rng, n_vertices, weight_range=(0.1, 10.0)):
    lo, hi = weight_range
    return WeightedGraph.chain(rng.uniform(lo, hi, n_vertices), rng.uniform(lo, hi, n_vertices - 1))
