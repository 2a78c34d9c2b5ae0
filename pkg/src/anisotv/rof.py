"""ROF denoising on weighted graphs.

The primal problem is

    min_u  1/2 sum_v w(v) (f(v) - u(v))^2 + alpha * J_W(u)

and its dual is a projection onto the image of the box ``|H| <= alpha``
under the weighted divergence: ``u = f - div H`` with ``H`` minimizing
``1/2 ||f - div H||_w^2``.  :func:`solve_rof` runs accelerated projected
gradient on ``H`` and stops on the duality gap.  :func:`solve_chain_exact`
is an independent taut-string solver for path graphs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree

from anisotv.errors import (
    ConvergenceError,
    InfeasibleCertificateError,
    ShapeError,
    TopologyError,
)
from anisotv.graph import (
    WeightedGraph,
    edge_differences,
    total_variation,
    weighted_divergence,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200_000
# a polished pair at this relative gap is exact up to rounding
EXACT_RTOL = 1e-12


@dataclass
class RofSolution:
    u: np.ndarray
    H: np.ndarray
    gap: float
    iterations: int
    alpha: float
    primal: float = field(default=float("nan"))

    @property
    def dual_variable(self) -> np.ndarray:
        """``u* = w * div H``, the dual solution in vertex form."""
        return self.H

    def relative_gap(self) -> float:
        return self.gap / (1.0 + abs(self.primal))


def primal_objective(g: WeightedGraph, f, alpha, u) -> float:
    f = g.check_vertex_function(f, "f")
    u = g.check_vertex_function(u, "u")
    r = f - u
    return float(0.5 * np.dot(g.vertex_weights * r, r) + alpha * total_variation(g, u))


def _gap(g, alpha, u, H):
    du = u[g.heads] - u[g.tails]
    W = g.edge_weights
    return float(alpha * np.dot(W, np.abs(du)) - np.dot(W * du, H))


def duality_gap(g: WeightedGraph, f, alpha, u, H, *, rtol=1e-10) -> float:
    """``alpha J_W(u) - <u, div H>_w`` for a feasible pair.

    The pair must satisfy ``|H| <= alpha`` and ``u = f - div H``; otherwise
    :class:`InfeasibleCertificateError` names the failing constraint.
    """
    f = g.check_vertex_function(f, "f")
    u = g.check_vertex_function(u, "u")
    H = g.check_edge_function(H, "H")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    excess = float(np.max(np.abs(H) - alpha, initial=0.0))
    if excess > rtol * max(1.0, alpha):
        raise InfeasibleCertificateError("box constraint |H| <= alpha", excess)
    div = weighted_divergence(g, H)
    resid = float(np.max(np.abs(u - (f - div)), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(f), initial=0.0)),
                float(np.max(np.abs(div), initial=0.0)))
    if resid > rtol * scale:
        raise InfeasibleCertificateError("primal-dual relation u = f - div H", resid)
    return max(_gap(g, alpha, u, H), 0.0)


def operator_norm_sq(g: WeightedGraph, n_iter=1000, rtol=1e-6) -> float:
    """Largest eigenvalue of ``K^T diag(1/w) K`` by power iteration.

    ``K`` is the flux matrix, so this is the squared norm of the divergence
    as a map from Euclidean edge space to the w-weighted vertex space.
    """
    if g.n_edges == 0:
        return 0.0
    K, Kt, w = g.flux_matrix, g.flux_matrix_t, g.vertex_weights
    # deterministic, generic start vector
    x = 1.0 + 0.5 * np.cos(np.arange(g.n_edges) * 0.7548776662)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        y = Kt @ ((K @ x) / w)
        lam_new = float(np.linalg.norm(y))
        if lam_new == 0.0:
            return 0.0
        x = y / lam_new
        if abs(lam_new - lam) <= rtol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return lam


def edge_steps(g: WeightedGraph, rule: str = "diagonal") -> np.ndarray:
    """Per-edge gradient step sizes for the dual iteration.

    ``"global"`` is ``1 / (1.05 L)`` with ``L`` from :func:`operator_norm_sq`.
    ``"diagonal"`` inverts the absolute row sums of ``K^T diag(1/w) K``,
    a diagonal majorizer of it, so the clamp stays an exact projection.
    """
    if rule == "global":
        return np.full(g.n_edges, 1.0 / (1.05 * operator_norm_sq(g)))
    if rule != "diagonal":
        raise ValueError(f"unknown step rule {rule!r}")
    W, w = g.edge_weights, g.vertex_weights
    load = (np.bincount(g.tails, W, g.n_vertices) + np.bincount(g.heads, W, g.n_vertices)) / w
    return 1.0 / (W * (load[g.tails] + load[g.heads]))


def solve_rof(
    g: WeightedGraph,
    f,
    alpha: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    H0=None,
    step_rule: str = "diagonal",
    check_every: int = 10,
    polish_every: int = 2000,
    snap: bool = True,
) -> RofSolution:
    """Minimize ``1/2 ||f - u||_w^2 + alpha J_W(u)`` over vertex functions.

    Accelerated projected gradient on the dual box with adaptive restart.
    Returns once ``gap <= tol * (1 + |primal|)``; raises
    :class:`ConvergenceError` with the best iterate if ``max_iter`` is hit.

    With ``snap`` (the default) the converged pair is passed through
    :func:`polish`.  If that does not give an exact pair, iteration goes on
    for at most as many steps again, retrying the polish as the gap falls.
    Every ``polish_every`` iterations a polished candidate may also end the
    run early.  A polished pair is only returned when its duality gap is
    smaller, so the certificate never gets worse.
    """
    f = g.check_vertex_function(f, "f")
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    alpha = float(alpha)
    m = g.n_edges
    if alpha == 0.0 or m == 0:
        u = f.copy()
        return RofSolution(u, np.zeros(m), 0.0, 0, alpha, primal_objective(g, f, alpha, u))

    K, Kt, w = g.flux_matrix, g.flux_matrix_t, g.vertex_weights
    W = g.edge_weights
    step = edge_steps(g, step_rule)

    def evaluate(H, it):
        u = f - (K @ H) / w
        du = u[g.heads] - u[g.tails]
        tv = float(np.dot(W, np.abs(du)))
        gap = max(alpha * tv - float(np.dot(W * du, H)), 0.0)
        r = f - u
        primal = 0.5 * float(np.dot(w * r, r)) + alpha * tv
        return RofSolution(u, H.copy(), gap, it, alpha, primal)

    def converged(sol):
        return sol.gap <= tol * (1.0 + abs(sol.primal))

    def exact(sol):
        return sol.gap <= EXACT_RTOL * (1.0 + abs(sol.primal))

    H = np.zeros(m) if H0 is None else np.clip(g.check_edge_function(H0, "H0"), -alpha, alpha)
    Y = H.copy()
    t = 1.0
    best = None
    # once tol is met without an exact snap, run up to `extend_to` for a sharper certificate
    done, extend_to, last_try = None, None, np.inf
    for it in range(max_iter + 1):
        if it % check_every == 0 or it == max_iter or it == extend_to:
            sol = evaluate(H, it)
            if best is None or sol.gap < best.gap:
                best = sol
            if done is None and converged(sol):
                logger.debug("solve_rof converged: %d iterations, gap %.3e", it, sol.gap)
                if not snap:
                    return sol
                done = _try_polish(g, f, alpha, sol)
                if exact(done):
                    return done
                extend_to, last_try = min(2 * it + 200, max_iter), sol.gap
            elif done is not None and (sol.gap <= 0.01 * last_try or it >= extend_to):
                cand = _try_polish(g, f, alpha, sol)
                last_try = sol.gap
                if cand.gap < done.gap:
                    done = cand
                if exact(done) or it >= extend_to:
                    return done
            elif done is None and snap and it and it % polish_every == 0:
                cand = _try_polish(g, f, alpha, sol)
                if converged(cand):
                    logger.debug("solve_rof snapped at %d iterations, gap %.3e", it, cand.gap)
                    return cand
            if it == max_iter:
                if done is not None:
                    return done
                break
        uy = f - (K @ Y) / w
        # gradient of 1/2 ||f - div H||_w^2 is -K^T u
        H_new = Y + step * (Kt @ uy)
        np.clip(H_new, -alpha, alpha, out=H_new)
        if np.dot(Y - H_new, H_new - H) > 0.0:
            t = 1.0
            Y = H_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            Y = H_new + ((t - 1.0) / t_new) * (H_new - H)
            t = t_new
        H = H_new
    raise ConvergenceError(
        f"solve_rof did not reach relative gap {tol:g} in {max_iter} iterations "
        f"(best gap {best.gap:.3e})",
        best=best, gap=best.gap, iterations=max_iter,
    )


def _forest_flow(g: WeightedGraph, edges, cost, r):
    """Edge function supported on a spanning forest of ``edges`` with ``K dH = r``.

    ``r`` must sum to zero over every connected component of ``edges``.  The
    forest minimizes ``cost``; flow is pushed from the leaves to the roots.
    """
    n = g.n_vertices
    tails, heads = g.tails[edges], g.heads[edges]
    graph = sp.coo_matrix((cost, (tails, heads)), shape=(n, n)).tocsr()
    tree = minimum_spanning_tree(graph).tocoo()
    lo, hi = np.minimum(tree.row, tree.col), np.maximum(tree.row, tree.col)
    keys = np.minimum(tails, heads) * n + np.maximum(tails, heads)
    order_keys = np.argsort(keys)
    tree_edges = edges[order_keys[np.searchsorted(keys[order_keys], lo * n + hi)]]
    sym = sp.coo_matrix((np.ones(lo.size), (lo, hi)), shape=(n, n))
    sym = (sym + sym.T).tocsr()
    n_comp, labels = connected_components(sym, directed=False)
    edge_of = {}
    for e in tree_edges:
        edge_of[(int(g.tails[e]), int(g.heads[e]))] = int(e)
        edge_of[(int(g.heads[e]), int(g.tails[e]))] = int(e)
    acc = np.array(r, dtype=float)
    dH = np.zeros(g.n_edges)
    seen = np.zeros(n_comp, dtype=bool)
    W = g.edge_weights
    for root in range(n):
        c = labels[root]
        if seen[c]:
            continue
        seen[c] = True
        if sym.indptr[root + 1] == sym.indptr[root]:
            continue
        order, pred = breadth_first_order(sym, root, directed=False)
        for v in order[:0:-1]:
            p = pred[v]
            e = edge_of[(int(v), int(p))]
            coef = W[e] if g.heads[e] == v else -W[e]
            dH[e] = acc[v] / coef
            acc[p] += acc[v]
    return dH


def polish(g: WeightedGraph, f, alpha, u, H, delta):
    """Snap an approximate pair onto the exact solution of its active set.

    Edges with jump ``<= delta`` are treated as flat; their components are
    the level sets of ``u``.  Jump edges are saturated at ``alpha * sign``,
    each level set gets the value forced by mass balance, and the flow on
    flat edges is corrected along a spanning forest that prefers edges far
    from the box boundary.  Returns a new feasible ``(u, H, gap)``; the
    caller decides whether it beats the input.
    """
    K, w = g.flux_matrix, g.vertex_weights
    du = u[g.heads] - u[g.tails]
    flat = np.abs(du) <= delta
    n = g.n_vertices
    adj = sp.coo_matrix((np.ones(int(flat.sum())), (g.tails[flat], g.heads[flat])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    intra = labels[g.tails] == labels[g.heads]
    Hn = H.copy()
    Hn[~intra] = alpha * np.sign(du[~intra])
    b_inter = K[:, ~intra] @ Hn[~intra]
    level = np.bincount(labels, w * f - b_inter) / np.bincount(labels, w)
    target = w * (f - level[labels]) - b_inter
    r = target - K[:, intra] @ Hn[intra]
    if np.any(r != 0.0) and intra.any():
        edges = np.flatnonzero(intra)
        # cheap edges have slack; the offset keeps every cost strictly positive
        cost = np.abs(Hn[edges]) + 1e-3 * alpha
        Hn += _forest_flow(g, edges, cost, r)
    np.clip(Hn, -alpha, alpha, out=Hn)
    un = f - (K @ Hn) / w
    return un, Hn, max(_gap(g, alpha, un, Hn), 0.0)


def _flat_thresholds(g, sol):
    # flat edges of the exact solution have |du| <= 2 ||u - u*||_inf <= 2 sqrt(2 gap / min w)
    bound = 2.0 * np.sqrt(2.0 * sol.gap / g.vertex_weights.min())
    jumps = np.sort(np.abs(sol.u[g.heads] - sol.u[g.tails]))
    jumps = jumps[jumps > 0]
    out = [bound, 0.01 * bound]
    below = jumps[jumps <= bound]
    if below.size:
        nxt = jumps[below.size] if below.size < jumps.size else 2.0 * below[-1]
        upper = np.append(below[1:], nxt)
        ratio = upper / below
        i = int(np.argmax(ratio))
        out.insert(0, float(np.sqrt(below[i] * upper[i])))
    return out


def _try_polish(g, f, alpha, sol):
    """Best polished candidate over a few flatness thresholds, or ``sol``."""
    best = sol
    for delta in _flat_thresholds(g, sol):
        u, H, gap = polish(g, f, alpha, sol.u, sol.H, delta)
        if gap < best.gap:
            best = RofSolution(u, H, gap, sol.iterations, alpha, primal_objective(g, f, alpha, u))
    return best


def _slope(p, q):
    return (q[1] - p[1]) / (q[0] - p[0])


def taut_string(x, lower, upper):
    """Shortest path through the tube ``lower[k] <= y(x[k]) <= upper[k]``.

    ``x`` is strictly increasing and the tube is pinched at both ends
    (``lower[0] == upper[0]``, ``lower[-1] == upper[-1]``).  Returns the
    slope of the string on each interval ``[x[k], x[k+1]]``.
    """
    x = np.asarray(x, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = x.size - 1
    slopes = np.empty(n)
    origin = 0  # knot index where the current straight piece starts
    origin_pt = (x[0], lower[0])
    # lo_chain: concave hull of lower points seen from origin (slopes decreasing)
    # up_chain: convex hull of upper points seen from origin (slopes increasing)
    lo_chain = [(origin, origin_pt)]
    up_chain = [(origin, origin_pt)]

    def emit(start, end, p, q):
        slopes[start:end] = _slope(p, q)

    for k in range(1, n + 1):
        q = (x[k], upper[k])
        while len(up_chain) >= 2 and _slope(up_chain[-2][1], up_chain[-1][1]) >= _slope(up_chain[-1][1], q):
            up_chain.pop()
        up_chain.append((k, q))
        # upper chain dropped below the lower chain: bend down over a lower point
        while len(lo_chain) >= 2 and _slope(lo_chain[0][1], lo_chain[1][1]) > _slope(up_chain[0][1], up_chain[1][1]):
            j, pj = lo_chain[1]
            emit(origin, j, origin_pt, pj)
            origin, origin_pt = j, pj
            lo_chain.pop(0)
            up_chain = [(origin, origin_pt), (k, q)]

        p = (x[k], lower[k])
        while len(lo_chain) >= 2 and _slope(lo_chain[-2][1], lo_chain[-1][1]) <= _slope(lo_chain[-1][1], p):
            lo_chain.pop()
        lo_chain.append((k, p))
        # lower chain rose above the upper chain: bend up under an upper point
        while len(up_chain) >= 2 and _slope(up_chain[0][1], up_chain[1][1]) < _slope(lo_chain[0][1], lo_chain[1][1]):
            j, qj = up_chain[1]
            emit(origin, j, origin_pt, qj)
            origin, origin_pt = j, qj
            up_chain.pop(0)
            lo_chain = [(origin, origin_pt), (k, p)]

    # both chains end at the pinched endpoint; finish along whichever is straight
    chain = lo_chain if len(lo_chain) <= len(up_chain) else up_chain
    for (i, pi), (j, pj) in zip(chain[:-1], chain[1:]):
        emit(i, j, pi, pj)
    return slopes


def solve_chain_exact(f, w, W, alpha: float) -> np.ndarray:
    """Exact weighted ROF minimizer on the path v0 - v1 - ... - v(n-1).

    With cumulative weight ``X_k = sum_{i<k} w_i`` and cumulative mass
    ``C_k = sum_{i<k} w_i f_i``, the dual constraint says the cumulative mass
    of ``u`` stays within ``alpha * W_{k-1}`` of ``C_k``.  The solution is the
    slope of the taut string through that tube.
    """
    f = np.asarray(f, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    W = np.asarray(W, dtype=float).reshape(-1)
    n = f.size
    if w.size != n:
        raise ShapeError(f"{w.size} vertex weights for {n} values")
    if W.size != max(n - 1, 0):
        raise TopologyError(f"a chain of {n} vertices has {n - 1} edges, got {W.size} edge weights")
    if np.any(w <= 0) or np.any(W <= 0):
        raise ValueError("weights must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0 or n <= 1:
        return f.copy()
    X = np.concatenate([[0.0], np.cumsum(w)])
    C = np.concatenate([[0.0], np.cumsum(w * f)])
    band = np.concatenate([[0.0], alpha * W, [0.0]])
    return taut_string(X, C - band, C + band)


def chain_weights(g: WeightedGraph):
    """Vertex order and edge weights of ``g`` if it is a path graph, else raise.

    Returns ``(order, W)`` where ``order`` lists vertices along the path and
    ``W[k]`` is the weight of the edge between ``order[k]`` and ``order[k+1]``.
    """
    n, m = g.n_vertices, g.n_edges
    if m != n - 1:
        raise TopologyError(f"path graph on {n} vertices needs {n - 1} edges, has {m}")
    if n == 1:
        return np.array([0]), np.zeros(0)
    deg = np.bincount(g.tails, minlength=n) + np.bincount(g.heads, minlength=n)
    if deg.max() > 2 or np.any(deg == 0):
        raise TopologyError("graph is not a path")
    nbrs = [[] for _ in range(n)]
    for e, (i, j) in enumerate(zip(g.tails, g.heads)):
        nbrs[i].append((j, e))
        nbrs[j].append((i, e))
    start = int(np.flatnonzero(deg == 1)[0])
    order, W = [start], []
    prev, cur = -1, start
    while len(order) < n:
        step = [(v, e) for v, e in nbrs[cur] if v != prev]
        if not step:
            break
        v, e = step[0]
        order.append(v)
        W.append(g.edge_weights[e])
        prev, cur = cur, v
    if len(order) != n:
        raise TopologyError("graph is not connected")
    return np.array(order), np.array(W)


def solve_chain_graph(g: WeightedGraph, f, alpha: float) -> np.ndarray:
    """:func:`solve_chain_exact` applied to a path graph in any vertex order."""
    f = g.check_vertex_function(f, "f")
    order, W = chain_weights(g)
    u = np.empty_like(f)
    u[order] = solve_chain_exact(f[order], g.vertex_weights[order], W, alpha)
    return u


@dataclass
class OptimalityReport:
    ok: bool
    failures: list

    def __bool__(self):
        return self.ok


def verify_optimality(g: WeightedGraph, f, alpha, u, H, tol) -> OptimalityReport:
    """Check the optimality conditions of a primal-dual pair.

    (a) ``|H| <= alpha``; (b) ``u = f - div H``; (c) on every edge whose jump
    exceeds ``tol``, ``H`` equals ``alpha`` times the sign of the jump.
    All comparisons are within ``tol``.
    """
    f = g.check_vertex_function(f, "f")
    u = g.check_vertex_function(u, "u")
    H = g.check_edge_function(H, "H")
    failures = []
    box = np.abs(H) - alpha
    if np.any(box > tol):
        bad = np.flatnonzero(box > tol)
        failures.append(f"box: {bad.size} edges exceed alpha (worst {box.max():.3e})")
    resid = np.abs(u - (f - weighted_divergence(g, H)))
    if np.any(resid > tol):
        failures.append(f"relation: u != f - div H (worst {resid.max():.3e})")
    du = edge_differences(g, u)
    jump = np.abs(du) > tol
    mismatch = np.abs(H - alpha * np.sign(du))
    bad = jump & (mismatch > tol)
    if np.any(bad):
        failures.append(
            f"sign: {int(bad.sum())} jump edges not saturated (worst {mismatch[bad].max():.3e})"
        )
    return OptimalityReport(not failures, failures)
