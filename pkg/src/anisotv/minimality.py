"""Sampled checks that the ROF minimizer minimizes every convex integral.

For a datum ``f`` the minimizer ``u_alpha`` satisfies

    sum_v w(v) phi(u_alpha(v)) <= sum_v w(v) phi(u(v))

for every convex ``phi`` and every ``u = f - div H`` with ``|H| <= alpha``.
The audits below draw such competitors at random and report, per probe, the
largest amount by which the left side exceeds the right side.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from anisotv.errors import AuditFailure
from anisotv.graph import WeightedGraph, lp_norm, weighted_divergence
from anisotv.grid import Grid, PcrFunction, iota, iota_inv, sample_subgradient
from anisotv.rof import DEFAULT_TOL, solve_rof


@dataclass(frozen=True)
class ConvexProbe:
    name: str
    evaluator: Callable[[np.ndarray], np.ndarray]

    def __call__(self, t):
        return self.evaluator(np.asarray(t, dtype=float))


def _huber(delta):
    def phi(t):
        a = np.abs(t)
        return np.where(a <= delta, 0.5 * t * t, delta * (a - 0.5 * delta))

    return phi


def convex_catalog(include_linear: bool = True) -> list[ConvexProbe]:
    """The convex test functions used by the audits.

    The two linear probes are convex and concave at once, so the audit
    value for them must vanish up to rounding.
    """
    probes = [
        ConvexProbe("abs", np.abs),
        ConvexProbe("square", np.square),
        ConvexProbe("abs_shift_0.7", lambda t: np.abs(t - 0.7)),
        ConvexProbe("positive_part", lambda t: np.maximum(t, 0.0)),
        ConvexProbe("abs_pow_1.5", lambda t: np.abs(t) ** 1.5),
        ConvexProbe("abs_pow_3", lambda t: np.abs(t) ** 3),
        ConvexProbe("pow_4", lambda t: t**4),
        ConvexProbe("exp", np.exp),
        ConvexProbe("huber_0.5", _huber(0.5)),
        ConvexProbe("asym_hinge", lambda t: np.maximum(0.3 * t, -2.0 * t)),
    ]
    if include_linear:
        probes += [
            ConvexProbe("linear", lambda t: t + 0.0),
            ConvexProbe("neg_linear", lambda t: -t),
        ]
    return probes


@dataclass
class ProbeResult:
    name: str
    worst: float
    scale: float
    witness: str
    witness_seed: int | None

    def to_dict(self):
        return {
            "probe": self.name,
            "worst_violation": self.worst,
            "scale": self.scale,
            "witness": self.witness,
            "witness_seed": self.witness_seed,
        }


@dataclass
class AuditReport:
    probes: list[ProbeResult]
    n_samples: int
    generator: str
    tol: float
    alpha: float | None
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(p.worst <= self.tol * p.scale for p in self.probes)

    def worst(self, name: str) -> float:
        for p in self.probes:
            if p.name == name:
                return p.worst
        raise KeyError(name)

    def failures(self) -> list[ProbeResult]:
        return [p for p in self.probes if p.worst > self.tol * p.scale]

    def to_dict(self):
        out = {
            "passed": self.passed,
            "alpha": self.alpha,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "generator": self.generator,
            "tol": self.tol,
            "probes": [p.to_dict() for p in self.probes],
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["probe", "worst_violation", "scale", "threshold", "passed", "witness", "witness_seed"])
        for p in self.probes:
            thr = self.tol * p.scale
            writer.writerow([p.name, repr(p.worst), repr(p.scale), repr(thr),
                             int(p.worst <= thr), p.witness,
                             "" if p.witness_seed is None else p.witness_seed])
        return buf.getvalue()


def sample_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th competitor, independent of evaluation order."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _n_threads() -> int:
    try:
        return max(1, int(os.environ.get("ANISOTV_THREADS", "1")))
    except ValueError:
        return 1


def _audit(weights, ref, best, fixed, competitor, alpha, n_samples, seed, tol, probes, generator,
           raise_on_failure):
    """Worst ``sum weights phi(best) - sum weights phi(u)`` over competitors ``u``.

    ``fixed`` lists ``(label, u)`` competitors checked before the random
    ones; the tolerance scale of each probe is ``max(1, sum weights |phi(ref)|)``.
    """
    if alpha is not None and alpha <= 0:
        raise ValueError("alpha must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    probes = convex_catalog() if probes is None else list(probes)

    def integrals(u):
        return np.array([np.dot(weights, p(u)) for p in probes])

    base = integrals(best)
    scale = np.array([max(1.0, float(np.dot(weights, np.abs(p(ref))))) for p in probes])

    def one(i):
        s = sample_seed(seed, i)
        return base - integrals(competitor(s)), s

    labels = [(label, None) for label, _ in fixed]
    rows = [base - integrals(u) for _, u in fixed]
    threads = _n_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(n_samples)))
    else:
        results = [one(i) for i in range(n_samples)]
    for i, (viol, s) in enumerate(results):
        rows.append(viol)
        labels.append((f"sample {i}", s))
    table = np.array(rows)
    best = np.argmax(table, axis=0)
    report = AuditReport(
        [ProbeResult(p.name, float(table[best[j], j]), float(scale[j]), *labels[best[j]])
         for j, p in enumerate(probes)],
        n_samples, generator, tol, None if alpha is None else float(alpha), int(seed),
    )
    if raise_on_failure and not report.passed:
        bad = report.failures()[0]
        raise AuditFailure(report, {"probe": bad.name, "competitor": bad.witness,
                                    "seed": bad.witness_seed, "violation": bad.worst})
    return report


def minimality_audit(
    g: WeightedGraph,
    f,
    alpha: float,
    n_samples: int = 100,
    seed: int = 0,
    tol: float = 1e-7,
    *,
    probes=None,
    solver_tol: float = DEFAULT_TOL,
    solution=None,
    raise_on_failure: bool = True,
) -> AuditReport:
    """Compare ``u_alpha`` against ``f``, itself and random ``f - div H``.

    ``H`` is drawn uniformly from the box ``|H| <= alpha``, each sample from
    its own stream derived from ``(seed, index)``.  A probe fails when a
    competitor wins by more than ``tol * max(1, sum w |phi(f)|)``; with
    ``raise_on_failure`` that raises :class:`AuditFailure`.
    """
    f = g.check_vertex_function(f, "f")
    sol = solution if solution is not None else solve_rof(g, f, alpha, solver_tol)
    w = g.vertex_weights

    def competitor(s):
        H = alpha * (2.0 * np.random.default_rng(s).random(g.n_edges) - 1.0)
        return f - weighted_divergence(g, H)

    report = _audit(w, f, sol.u, [("f", f), ("u_alpha", sol.u)], competitor, alpha, n_samples, seed, tol, probes,
                    "f - div H, H uniform on |H| <= alpha; plus f and u_alpha", raise_on_failure)
    report.extra["duality_gap"] = sol.gap
    return report


def pcr_minimality_audit(
    grid: Grid,
    f: PcrFunction,
    alpha: float,
    n_samples: int = 100,
    seed: int = 0,
    tol: float = 1e-7,
    *,
    probes=None,
    solver_tol: float = DEFAULT_TOL,
    raise_on_failure: bool = True,
) -> AuditReport:
    """The same audit for piecewise constant data, with integrals over cells.

    Competitors are ``f - g`` with ``g`` from :func:`sample_subgradient`.
    """
    sol = solve_rof(grid.graph, iota(f), alpha, solver_tol)
    u = iota_inv(sol.u, grid)

    def competitor(s):
        return (f - sample_subgradient(grid, alpha, s)).values

    fixed = [("f", f.values), ("u_alpha", u.values)]
    report = _audit(grid.volumes, f.values, u.values, fixed, competitor, alpha, n_samples, seed, tol,
                    probes, "f - sample_subgradient(grid, alpha); plus f and u_alpha",
                    raise_on_failure)
    report.extra["duality_gap"] = sol.gap
    return report


def lp_norms_report(g: WeightedGraph, f, alpha: float, p_list=(1, 2, np.inf), *,
                    solver_tol: float = DEFAULT_TOL, solution=None) -> list[tuple]:
    """Rows ``(p, ||u_alpha||_p, ||f||_p)`` in the weighted norms of ``g``."""
    f = g.check_vertex_function(f, "f")
    sol = solution if solution is not None else solve_rof(g, f, alpha, solver_tol)
    w = g.vertex_weights
    rows = []
    for p in p_list:
        p = float(p)
        if not (p >= 1):
            raise ValueError(f"p must lie in [1, inf], got {p}")
        rows.append((p, lp_norm(sol.u, w, p), lp_norm(f, w, p)))
    return rows


@dataclass
class RefinementStudy:
    """Norm table over a nested family of grids and nested-solve residuals.

    Row ``m`` solves on the level with ``m`` times fewer breakpoint strides
    than the data grid has (``m = 8`` is the data grid itself) and holds
    ``(m, cells, diagonal, ||u_m||, ||A_m u||, ||u||)`` in ``L^2``.
    """

    rows: list
    consistency: list
    tol: float

    @property
    def monotone(self) -> bool:
        return all(r["norm_level"] <= r["norm_averaged"] + self.tol
                   and r["norm_averaged"] <= r["norm_data"] + 1e-8 for r in self.rows)

    @property
    def consistent(self) -> bool:
        return all(c["max_abs_diff"] <= 10 * self.tol for c in self.consistency)

    @property
    def passed(self) -> bool:
        return self.monotone and self.consistent

    def to_dict(self):
        return {"levels": self.rows, "nested": self.consistency, "tol": self.tol,
                "monotone": self.monotone, "consistent": self.consistent}


def refinement_study(grid: Grid, f: PcrFunction, alpha: float, tol: float = DEFAULT_TOL,
                     levels=(1, 2, 4, 8), factors=(2, 4), max_iter: int | None = None) -> RefinementStudy:
    """Solve on coarsenings and refinements of the data grid.

    Each level ``m`` keeps every ``(max(levels) / m)``-th breakpoint of the
    data grid, so the levels are nested and the finest is the data grid.
    On level ``m`` the datum is ``A_m f``; the minimizer's norm can exceed
    neither that of ``A_m u_alpha`` nor that of ``u_alpha``.  For each factor
    ``k`` the datum is also solved on the ``k``-fold refinement; averaging
    that solution back must reproduce ``u_alpha``.
    """
    from anisotv.grid import average, coarsen_grid, refine_grid

    kw = {} if max_iter is None else {"max_iter": max_iter}
    base = solve_rof(grid.graph, iota(f), alpha, tol, **kw)
    u = iota_inv(base.u, grid)
    top = max(levels)
    rows = []
    for m in sorted(levels):
        if top % m:
            raise ValueError(f"level {m} does not divide {top}")
        level = coarsen_grid(grid, top // m)
        sol = solve_rof(level.graph, average(level, f).values, alpha, tol, **kw)
        rows.append({
            "m": m,
            "cells": level.n_cells,
            "diagonal": level.longest_diagonal,
            "norm_level": lp_norm(sol.u, level.volumes, 2),
            "norm_averaged": average(level, u).norm(2),
            "norm_data": u.norm(2),
            "gap": sol.gap,
        })
    consistency = []
    for k in factors:
        fine = refine_grid(grid, k)
        sol = solve_rof(fine.graph, f.on(fine).values, alpha, tol, **kw)
        back = average(grid, iota_inv(sol.u, fine))
        consistency.append({
            "factor": k,
            "cells": fine.n_cells,
            "max_abs_diff": float(np.max(np.abs(back.values - u.values))),
            "gap": sol.gap,
        })
    return RefinementStudy(rows, consistency, tol)
