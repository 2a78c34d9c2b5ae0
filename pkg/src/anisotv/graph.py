"""Oriented weighted graphs and their discrete calculus.

Vertex functions and edge functions are plain 1-d float arrays indexed by
vertex number and edge number respectively.  A graph stores its edges as two
parallel arrays ``tails`` and ``heads``; edge ``e`` points from ``tails[e]``
to ``heads[e]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from anisotv.errors import GraphError, ShapeError


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Oriented graph with positive vertex weights ``w`` and edge weights ``W``.

    Vertex weights play the role of cell volumes and edge weights the role of
    the area of the face shared by two cells.
    """

    tails: np.ndarray
    heads: np.ndarray
    vertex_weights: np.ndarray
    edge_weights: np.ndarray

    def __post_init__(self):
        tails = np.asarray(self.tails, dtype=np.int64).reshape(-1)
        heads = np.asarray(self.heads, dtype=np.int64).reshape(-1)
        w = np.asarray(self.vertex_weights, dtype=float).reshape(-1)
        W = np.asarray(self.edge_weights, dtype=float).reshape(-1)
        n = w.size
        if n == 0:
            raise GraphError("graph needs at least one vertex")
        if tails.size != heads.size or tails.size != W.size:
            raise ShapeError(
                f"edge arrays disagree: {tails.size} tails, {heads.size} heads, "
                f"{W.size} weights"
            )
        if tails.size:
            lo = min(tails.min(), heads.min())
            hi = max(tails.max(), heads.max())
            if lo < 0 or hi >= n:
                raise GraphError(f"edge endpoint out of range [0, {n})")
        if np.any(tails == heads):
            raise GraphError("self-loops are not allowed")
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise GraphError("vertex weights must be positive and finite")
        if not (np.all(np.isfinite(W)) and np.all(W > 0)):
            raise GraphError("edge weights must be positive and finite")
        lo_end = np.minimum(tails, heads)
        hi_end = np.maximum(tails, heads)
        keys = lo_end * n + hi_end
        if np.unique(keys).size != keys.size:
            raise GraphError("duplicate or anti-parallel edges are not allowed")
        for name, arr in (("tails", tails), ("heads", heads),
                          ("vertex_weights", w), ("edge_weights", W)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_edges(cls, n_vertices, edges, vertex_weights=None, edge_weights=None):
        """Build a graph from a list of ``(i, j)`` pairs; weights default to 1."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if vertex_weights is None:
            vertex_weights = np.ones(n_vertices)
        if edge_weights is None:
            edge_weights = np.ones(len(edges))
        vertex_weights = np.asarray(vertex_weights, dtype=float)
        if vertex_weights.size != n_vertices:
            raise ShapeError(
                f"expected {n_vertices} vertex weights, got {vertex_weights.size}"
            )
        return cls(edges[:, 0], edges[:, 1], vertex_weights, edge_weights)

    @classmethod
    def chain(cls, vertex_weights, edge_weights):
        """Path graph v0 -> v1 -> ... -> v(n-1)."""
        w = np.asarray(vertex_weights, dtype=float)
        idx = np.arange(w.size - 1)
        return cls(idx, idx + 1, w, edge_weights)

    @property
    def n_vertices(self) -> int:
        return self.vertex_weights.size

    @property
    def n_edges(self) -> int:
        return self.edge_weights.size

    @property
    def edges(self) -> np.ndarray:
        return np.column_stack([self.tails, self.heads])

    def with_vertex_weights(self, vertex_weights) -> "WeightedGraph":
        return WeightedGraph(self.tails, self.heads, vertex_weights, self.edge_weights)

    def flipped(self, mask) -> "WeightedGraph":
        """Copy of the graph with the edges selected by ``mask`` reversed."""
        mask = np.asarray(mask, dtype=bool)
        tails = np.where(mask, self.heads, self.tails)
        heads = np.where(mask, self.tails, self.heads)
        return WeightedGraph(tails, heads, self.vertex_weights, self.edge_weights)

    @cached_property
    def flux_matrix(self) -> sp.csr_matrix:
        """Sparse ``n x m`` matrix with ``+W(e)`` at the head and ``-W(e)`` at the tail.

        Its product with an edge function is the weighted divergence before
        division by the vertex weights.  CSR keeps column indices sorted, so
        the per-vertex sums run in ascending edge order.
        """
        m = self.n_edges
        cols = np.concatenate([np.arange(m), np.arange(m)])
        rows = np.concatenate([self.heads, self.tails])
        vals = np.concatenate([self.edge_weights, -self.edge_weights])
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_vertices, m))
        mat.sort_indices()
        return mat

    @cached_property
    def flux_matrix_t(self) -> sp.csr_matrix:
        mat = self.flux_matrix.T.tocsr()
        mat.sort_indices()
        return mat

    @cached_property
    def components(self) -> np.ndarray:
        """Connected-component label of every vertex (orientation ignored)."""
        adj = sp.coo_matrix(
            (np.ones(self.n_edges), (self.tails, self.heads)),
            shape=(self.n_vertices, self.n_vertices),
        )
        _, labels = connected_components(adj, directed=False)
        return labels

    def check_vertex_function(self, u, name="vertex function") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim != 1 or u.size != self.n_vertices:
            raise ShapeError(
                f"{name} has shape {u.shape}, graph has {self.n_vertices} vertices"
            )
        return u

    def check_edge_function(self, H, name="edge function") -> np.ndarray:
        H = np.asarray(H, dtype=float)
        if H.ndim != 1 or H.size != self.n_edges:
            raise ShapeError(
                f"{name} has shape {H.shape}, graph has {self.n_edges} edges"
            )
        return H


def weighted_divergence(g: WeightedGraph, H) -> np.ndarray:
    """Inflow minus outflow of ``W * H`` at each vertex, divided by its weight."""
    H = g.check_edge_function(H)
    return (g.flux_matrix @ H) / g.vertex_weights


def edge_differences(g: WeightedGraph, u) -> np.ndarray:
    """``u(head) - u(tail)`` for every edge."""
    u = g.check_vertex_function(u)
    return u[g.heads] - u[g.tails]


def total_variation(g: WeightedGraph, u) -> float:
    """Weighted total variation ``sum_e W(e) |u(head) - u(tail)|``.

    Vertex weights are not used.
    """
    return float(np.sum(g.edge_weights * np.abs(edge_differences(g, u))))


def tv_argmax_edges(g: WeightedGraph, u) -> np.ndarray:
    """An edge function in the unit box attaining the total variation.

    Flat edges get 0, which is one of the admissible values in [-1, 1].
    """
    return np.sign(edge_differences(g, u))


def vertex_pairing(g: WeightedGraph, u, h) -> float:
    """Weighted inner product ``sum_v w(v) u(v) h(v)``."""
    u = g.check_vertex_function(u)
    h = g.check_vertex_function(h)
    return float(np.dot(g.vertex_weights * u, h))


def edge_pairing(g: WeightedGraph, u, H) -> float:
    """``sum_e W(e) (u(head) - u(tail)) H(e)``, equal to ``<u, div H>_w``."""
    H = g.check_edge_function(H)
    return float(np.dot(g.edge_weights * edge_differences(g, u), H))


def weighted_norm(g: WeightedGraph, u, p=2.0) -> float:
    """``(sum_v w(v) |u(v)|^p)^(1/p)``; ``p = inf`` gives the max norm."""
    u = g.check_vertex_function(u)
    return lp_norm(u, g.vertex_weights, p)


def lp_norm(u, weights, p=2.0) -> float:
    u = np.abs(np.asarray(u, dtype=float))
    if np.isinf(p):
        return float(u.max()) if u.size else 0.0
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float(np.sum(weights * u**p) ** (1.0 / p))
