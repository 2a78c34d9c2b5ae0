"""Polytopes whose weighted projections are optimal for every convex cost.

Two kinds of compact convex sets are supported: the convex hull of an explicit
vertex list (:class:`VertexPolytope`) and the image of the box ``|H| <= alpha``
under the unweighted flux map of a graph (:class:`DivergenceBox`), i.e.
``{K H}`` with ``(K H)(v) = sum_in W H - sum_out W H``.

Membership and cone questions are linear programs solved with HiGHS through
:func:`scipy.optimize.linprog`.  Projections use an accelerated projected
gradient on a parameterization of the set followed by an exact solve on the
detected active face, so they do not share code with the ROF solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from anisotv.errors import ConvergenceError, InvariantError, MembershipError, ShapeError
from anisotv.graph import WeightedGraph
from anisotv.minimality import AuditReport, _audit

_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def segment_minimizer(a, w, b, k: int, l: int, c: float, d: float) -> np.ndarray:
    """Point of ``{b + t (e_k - e_l) : c <= t <= d}`` minimizing ``sum w phi((a - x) / w)``.

    The minimizer does not depend on the convex function ``phi``.
    """
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape != w.shape or a.ndim != 1:
        raise ShapeError("a, w and b must be vectors of equal length")
    if c > d:
        raise ValueError(f"empty parameter interval [{c}, {d}]")
    if k == l:
        raise ValueError("k and l must differ")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    t = ((a[k] - b[k]) * w[l] - (a[l] - b[l]) * w[k]) / (w[k] + w[l])
    t = min(max(t, c), d)
    x = b.copy()
    x[k] += t
    x[l] -= t
    return x


class PolytopeOracle:
    """A compact convex set ``{B z : z in Z}`` in ``R^n``."""

    dim: int

    @property
    def generator(self) -> np.ndarray:
        """Dense ``n x p`` matrix ``B``."""
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def _lp_bounds(self):
        raise NotImplementedError

    def _lp_extra(self):
        """Extra equality rows on ``z`` (the simplex constraint for hulls)."""
        return None, None

    def _solve(self, x, direction=None, eps=0.0):
        """LP in ``(z, t, s+, s-)``: ``B z - t d + s+ - s- = x``.

        Without a direction it minimizes the l1 residual; with one it
        maximizes ``t`` in ``[0, eps]`` subject to zero residual.
        """
        B = self.generator
        n, p = B.shape
        x = np.asarray(x, dtype=float)
        bounds = list(self._lp_bounds())
        A_extra, b_extra = self._lp_extra()
        if direction is None:
            A = np.hstack([B, np.eye(n), -np.eye(n)])
            cost = np.concatenate([np.zeros(p), np.ones(2 * n)])
            bounds += [(0, None)] * (2 * n)
            if A_extra is not None:
                A_extra = np.hstack([A_extra, np.zeros((A_extra.shape[0], 2 * n))])
        else:
            A = np.hstack([B, -np.asarray(direction, dtype=float)[:, None]])
            cost = np.zeros(p + 1)
            cost[-1] = -1.0
            bounds += [(0, eps)]
            if A_extra is not None:
                A_extra = np.hstack([A_extra, np.zeros((A_extra.shape[0], 1))])
        if A_extra is not None:
            A = np.vstack([A, A_extra])
            rhs = np.concatenate([x, b_extra])
        else:
            rhs = x
        return linprog(cost, A_eq=sp.csr_matrix(A), b_eq=rhs, bounds=bounds,
                       method="highs", options=_LP_OPTIONS)

    def distance_l1(self, x) -> float:
        x = self._check(x)
        res = self._solve(x)
        if res.status != 0:
            raise InvariantError(f"membership LP failed: {res.message}")
        return float(res.fun)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = self._check(x)
        return self.distance_l1(x) <= tol * max(1.0, self.diameter())

    def preimage(self, x) -> np.ndarray:
        """Some ``z`` with ``B z = x``, up to the LP tolerance."""
        x = self._check(x)
        res = self._solve(x)
        if res.status != 0:
            raise InvariantError(f"membership LP failed: {res.message}")
        return res.x[: self.generator.shape[1]]

    def max_step(self, x, direction, eps: float) -> float:
        """Largest ``t`` in ``[0, eps]`` with ``x + t * direction`` in the set."""
        res = self._solve(self._check(x), direction, eps)
        if res.status == 2:
            return 0.0
        if res.status != 0:
            raise InvariantError(f"step LP failed: {res.message}")
        return float(res.x[-1])

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ShapeError(f"point of shape {x.shape} in a set of dimension {self.dim}")
        return x

    def extreme_candidates(self, x):
        """Finitely many points ``m`` such that ``M - x`` lies in the cone they span from ``x``."""
        raise NotImplementedError

    def sample(self, rng, count: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(eq=False)
class VertexPolytope(PolytopeOracle):
    vertices: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if V.size == 0 or not np.all(np.isfinite(V)):
            raise InvariantError("a polytope needs finitely many finite vertices")
        self.vertices = V
        self.dim = V.shape[1]

    @property
    def generator(self):
        return self.vertices.T

    def _lp_bounds(self):
        return [(0, None)] * self.vertices.shape[0]

    def _lp_extra(self):
        return np.ones((1, self.vertices.shape[0])), np.ones(1)

    def diameter(self) -> float:
        V = self.vertices
        return float(np.max(np.linalg.norm(V[:, None, :] - V[None, :, :], axis=2)))

    def extreme_candidates(self, x):
        return self.vertices.copy()

    def sample(self, rng, count):
        lam = rng.dirichlet(np.ones(self.vertices.shape[0]), size=count)
        return lam @ self.vertices


@dataclass(eq=False)
class DivergenceBox(PolytopeOracle):
    """``{K H : |H| <= alpha}`` for the flux matrix ``K`` of ``graph``."""

    graph: WeightedGraph
    alpha: float
    _B: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        self.dim = self.graph.n_vertices
        self._B = self.graph.flux_matrix.toarray()

    @property
    def generator(self):
        return self._B

    def _lp_bounds(self):
        return [(-self.alpha, self.alpha)] * self.graph.n_edges

    def diameter(self) -> float:
        """Sum of generator lengths, an upper bound for the true diameter."""
        return float(2.0 * self.alpha * np.sqrt(2.0) * np.sum(self.graph.edge_weights))

    def extreme_candidates(self, x):
        # M - x is the Minkowski sum of the segments [lo_e, hi_e] * K_e, so
        # it lies in a convex cone iff every segment endpoint does.
        H0 = np.clip(self.preimage(x), -self.alpha, self.alpha)
        x = np.asarray(x, dtype=float)
        out = []
        for e in range(self.graph.n_edges):
            col = self._B[:, e]
            for step in (-self.alpha - H0[e], self.alpha - H0[e]):
                if step != 0.0:
                    out.append(x + step * col)
        return np.array(out).reshape(-1, self.dim)

    def sample(self, rng, count):
        H = self.alpha * (2.0 * rng.random((count, self.graph.n_edges)) - 1.0)
        return H @ self._B.T


@dataclass
class ConeDirections:
    x: np.ndarray
    pairs: list
    eps: float

    @property
    def directions(self) -> np.ndarray:
        out = np.zeros((len(self.pairs), self.x.size))
        for r, (i, j) in enumerate(self.pairs):
            out[r, i] = 1.0
            out[r, j] = -1.0
        return out


def default_eps(M: PolytopeOracle) -> float:
    return 1e-6 * M.diameter()


def cone_directions(M: PolytopeOracle, x, eps: float | None = None, tol: float = 1e-9) -> ConeDirections:
    """All ``e_i - e_j`` along which one can move from ``x`` and stay in ``M``.

    A direction is admissible when the largest feasible step up to ``eps``
    exceeds ``1e-3 * eps``; below that it cannot be told apart from the LP
    tolerance.  ``(i, j)`` stands for ``e_i - e_j``.
    """
    x = M._check(x)
    if eps is None:
        eps = default_eps(M)
    if not M.contains(x, tol):
        raise MembershipError("base point is not in the set")
    pairs = []
    if M.diameter() == 0.0:
        return ConeDirections(x, pairs, eps)
    for i, j in permutations(range(M.dim), 2):
        s = np.zeros(M.dim)
        s[i], s[j] = 1.0, -1.0
        if M.max_step(x, s, eps) > 1e-3 * eps:
            pairs.append((i, j))
    return ConeDirections(x, pairs, eps)


def in_cone(directions: np.ndarray, v, tol: float = 1e-9) -> bool:
    """Is ``v`` a nonnegative combination of the rows of ``directions``?"""
    v = np.asarray(v, dtype=float)
    n = v.size
    scale = max(1.0, float(np.sum(np.abs(v))))
    if len(directions) == 0:
        return float(np.sum(np.abs(v))) <= tol * scale
    S = np.asarray(directions, dtype=float).T
    k = S.shape[1]
    A = np.hstack([S, np.eye(n), -np.eye(n)])
    cost = np.concatenate([np.zeros(k), np.ones(2 * n)])
    res = linprog(cost, A_eq=A, b_eq=v, bounds=[(0, None)] * (k + 2 * n),
                  method="highs", options=_LP_OPTIONS)
    if res.status != 0:
        raise InvariantError(f"cone LP failed: {res.message}")
    return float(res.fun) <= tol * scale


@dataclass
class ConeCheck:
    holds: bool
    n_candidates: int
    directions: list
    failing: np.ndarray | None = None
    exhaustive: bool = True

    def __bool__(self):
        return self.holds


def special_cone_check(M: PolytopeOracle, x, tol: float = 1e-9, eps: float | None = None) -> ConeCheck:
    """Whether ``M - x`` lies in the cone spanned by the admissible ``e_i - e_j``.

    The candidate points are exhaustive: hull vertices for vertex lists, and
    the endpoints of the generating segments for divergence boxes.
    """
    dirs = cone_directions(M, x, eps, tol)
    D = dirs.directions
    cands = M.extreme_candidates(dirs.x)
    for m in cands:
        if not in_cone(D, m - dirs.x, tol):
            return ConeCheck(False, len(cands), dirs.pairs, m)
    return ConeCheck(True, len(cands), dirs.pairs)


def _project_simplex(Z):
    """Euclidean projection of each row onto the probability simplex."""
    Z = np.atleast_2d(Z)
    U = -np.sort(-Z, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    idx = np.arange(1, Z.shape[1] + 1)
    rho = np.count_nonzero(U - css / idx > 0, axis=1)
    theta = css[np.arange(Z.shape[0]), rho - 1] / rho
    return np.maximum(Z - theta[:, None], 0.0)


def _fw_gap(M, a, w, x):
    """Frank-Wolfe gap of ``1/2 ||a - x||_{2,1/w}^2`` at ``x``; bounds the suboptimality."""
    r = (a - x) / w
    if isinstance(M, DivergenceBox):
        top = M.alpha * float(np.sum(np.abs(M.generator.T @ r)))
    else:
        top = float(np.max(M.vertices @ r))
    return top - float(np.dot(r, x))


def _face_solve(M, a, w, z):
    """Exact minimizer over the face of the parameter set that contains ``z``."""
    B = M.generator
    sw = 1.0 / np.sqrt(w)
    if isinstance(M, DivergenceBox):
        alpha = M.alpha
        fixed = np.abs(z) >= alpha * (1 - 1e-9)
        zz = np.where(fixed, alpha * np.sign(z), 0.0)
        free = ~fixed
        if np.any(free):
            rhs = (a - B[:, fixed] @ zz[fixed]) * sw
            sol, *_ = np.linalg.lstsq(B[:, free] * sw[:, None], rhs, rcond=None)
            zz[free] = sol
        if np.any(np.abs(zz) > alpha * (1 + 1e-12)):
            return None
        return np.clip(zz, -alpha, alpha)
    support = z > 1e-12
    k = int(support.sum())
    V = B[:, support] * sw[:, None]
    # KKT system of min ||V l - a sw||^2 subject to sum l = 1
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = V.T @ V
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([V.T @ (a * sw), [1.0]])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    lam = np.zeros_like(z)
    lam[support] = sol[:k]
    if np.any(lam < -1e-14):
        return None
    lam = np.maximum(lam, 0.0)
    return lam / lam.sum()


def weighted_projection(M: PolytopeOracle, a, w, tol: float = 1e-10, max_iter: int = 100_000):
    """Minimizer of ``||a - x||_{2,1/w}`` over ``M``.

    Returns ``x`` whose squared distance is within ``max(tol^2 / 2, 1e-14 s)``
    of optimal, where ``s = 1 + ||a||^2_{2,1/w}``, which puts ``x`` within
    ``tol`` of the projection in that norm once the first term dominates.
    """
    a = M._check(a)
    w = np.asarray(w, dtype=float)
    if w.shape != a.shape or np.any(w <= 0):
        raise ShapeError("weights must be positive and match the point")
    B = M.generator
    Bw = B / np.sqrt(w)[:, None]
    L = float(np.linalg.norm(Bw, 2) ** 2) or 1.0
    box = isinstance(M, DivergenceBox)

    def project(z):
        return np.clip(z, -M.alpha, M.alpha) if box else _project_simplex(z)[0]

    target = max(0.5 * tol * tol, 1e-14 * (1.0 + float(np.dot(a / w, a))))
    z = np.zeros(B.shape[1]) if box else np.full(B.shape[1], 1.0 / B.shape[1])
    y, t = z.copy(), 1.0
    best_x, best_gap = B @ z, _fw_gap(M, a, w, B @ z)
    for it in range(1, max_iter + 1):
        grad = -B.T @ ((a - B @ y) / w)
        z_new = project(y - grad / L)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if np.dot(z_new - z, y - z_new) > 0:
            t_new, y = 1.0, z_new.copy()
        else:
            y = z_new + ((t - 1.0) / t_new) * (z_new - z)
        z, t = z_new, t_new
        if it % 20 == 0 or it == max_iter:
            for cand in (z, _face_solve(M, a, w, z)):
                if cand is None:
                    continue
                x = B @ cand
                gap = _fw_gap(M, a, w, x)
                if gap < best_gap:
                    best_x, best_gap = x, gap
            if best_gap <= target:
                return best_x
    raise ConvergenceError(
        f"projection did not converge in {max_iter} iterations (gap {best_gap:.3e})",
        best=best_x, gap=best_gap, iterations=max_iter,
    )


def phi_min_audit(M: PolytopeOracle, a, w, n_samples: int = 100, seed: int = 0,
                  tol: float = 1e-7, *, probes=None, raise_on_failure: bool = True) -> AuditReport:
    """Check that the weighted projection beats random members of ``M`` for every probe.

    The cost of ``x`` under ``phi`` is ``sum_i w_i phi((a_i - x_i) / w_i)``.
    """
    a = M._check(a)
    w = np.asarray(w, dtype=float)
    x_star = weighted_projection(M, a, w)

    def residual(x):
        return (a - x) / w

    def competitor(s):
        return residual(M.sample(np.random.default_rng(s), 1)[0])

    fixed = [("projection", residual(x_star))]
    if isinstance(M, VertexPolytope):
        fixed += [(f"vertex {i}", residual(v)) for i, v in enumerate(M.vertices)]
    report = _audit(w, a / w, residual(x_star), fixed, competitor, None, n_samples, seed, tol,
                    probes, f"uniform samples of {type(M).__name__}", raise_on_failure)
    report.extra["projection"] = x_star.tolist()
    return report
