import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from anisotv.errors import ConvergenceError, InfeasibleCertificateError, TopologyError
from anisotv.generators import random_chain, random_graph
from anisotv.graph import WeightedGraph, total_variation, weighted_divergence, weighted_norm
from anisotv.rof import (
    duality_gap,
    primal_objective,
    solve_chain_exact,
    solve_chain_graph,
    solve_rof,
    taut_string,
    verify_optimality,
)

from conftest import small_graphs


def two_vertex_bruteforce(f, alpha):
    # the dual variable is a scalar in [-alpha, alpha]; scan it finely
    g = WeightedGraph.from_edges(2, [(0, 1)])
    Hs = np.linspace(-alpha, alpha, 200001)
    vals = [(f[0] + h) ** 2 + (f[1] - h) ** 2 for h in Hs]
    h = Hs[int(np.argmin(vals))]
    return np.asarray(f) - weighted_divergence(g, [h])


def dual_oracle(g, f, alpha):
    """Projected quasi-Newton on the dual, independent of the package solver."""
    K = g.flux_matrix.toarray()
    w = g.vertex_weights

    def fun(H):
        r = f - K @ H / w
        return 0.5 * np.dot(w * r, r), -K.T @ r

    res = minimize(fun, np.zeros(g.n_edges), jac=True, method="L-BFGS-B",
                   bounds=[(-alpha, alpha)] * g.n_edges,
                   options={"ftol": 1e-15, "gtol": 1e-13, "maxiter": 50000})
    return f - K @ res.x / w


@pytest.mark.parametrize("alpha, expected", [(0.5, [0.5, 1.5]), (2.0, [1.0, 1.0])])
def test_two_vertex(two_vertex, alpha, expected):
    sol = solve_rof(two_vertex, [0.0, 2.0], alpha)
    np.testing.assert_allclose(sol.u, expected, atol=1e-12)
    np.testing.assert_allclose(sol.u, two_vertex_bruteforce([0.0, 2.0], alpha), atol=1e-4)
    assert sol.gap <= 1e-9 * (1 + abs(sol.primal))
    assert verify_optimality(two_vertex, [0.0, 2.0], alpha, sol.u, sol.H, 1e-8)


def test_constant_datum_is_fixed(rng):
    g = random_graph(rng, 20, 40)
    f = np.full(20, 3.25)
    sol = solve_rof(g, f, 0.7)
    np.testing.assert_allclose(sol.u, f, atol=1e-12)
    assert sol.gap <= 1e-12


def test_alpha_zero_returns_datum(rng):
    g = random_graph(rng, 10, 15)
    f = rng.uniform(-1, 1, 10)
    sol = solve_rof(g, f, 0.0)
    assert np.array_equal(sol.u, f) and sol.gap == 0.0


def test_bad_parameters(two_vertex):
    with pytest.raises(ValueError):
        solve_rof(two_vertex, [0.0, 1.0], -1.0)
    with pytest.raises(ValueError):
        solve_rof(two_vertex, [0.0, 1.0], 1.0, tol=0.0)


def test_nonconvergence_carries_best_iterate(rng):
    g = random_graph(rng, 200, 600)
    f = rng.uniform(-1, 1, 200)
    with pytest.raises(ConvergenceError) as info:
        solve_rof(g, f, 1.0, tol=1e-12, max_iter=5, snap=False)
    assert info.value.best is not None and info.value.gap > 0
    assert info.value.iterations == 5


def test_duality_gap_examples(two_vertex):
    f = np.array([0.0, 2.0])
    assert duality_gap(two_vertex, f, 0.5, f, [0.0]) == pytest.approx(0.5 * total_variation(two_vertex, f))
    assert duality_gap(two_vertex, f, 0.5, [0.5, 1.5], [0.5]) == pytest.approx(0.0, abs=1e-15)
    # constant u with a compatible H
    assert duality_gap(two_vertex, [1.0, 1.0], 2.0, [1.0, 1.0], [0.0]) == 0.0


def test_duality_gap_names_violated_constraint(two_vertex):
    with pytest.raises(InfeasibleCertificateError, match="box"):
        duality_gap(two_vertex, [0.0, 2.0], 0.5, [1.0, 1.0], [1.0])
    with pytest.raises(InfeasibleCertificateError, match="primal-dual"):
        duality_gap(two_vertex, [0.0, 2.0], 0.5, [0.0, 0.0], [0.5])


def test_verify_optimality_reports(two_vertex):
    f = np.array([0.0, 2.0])
    bad = verify_optimality(two_vertex, f, 0.5, [-1.0, 3.0], [1.0], 1e-9)
    assert not bad and any("box" in x for x in bad.failures)
    assert verify_optimality(two_vertex, [1.0, 1.0], 2.0, [1.0, 1.0], [0.0], 1e-9)
    wrong_sign = verify_optimality(two_vertex, f, 0.5, [0.25, 1.75], [0.25], 1e-9)
    assert not wrong_sign


@pytest.mark.parametrize("seed", range(6))
def test_against_dual_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 12, 25, weight_range=(0.5, 2.0))
    f = rng.uniform(-1, 1, 12)
    alpha = [0.01, 0.1, 0.3][seed % 3]
    sol = solve_rof(g, f, alpha)
    np.testing.assert_allclose(sol.u, dual_oracle(g, f, alpha), atol=1e-5)


def test_chain_examples():
    np.testing.assert_allclose(solve_chain_exact([0.0, 2.0], [1, 1], [1], 0.5), [0.5, 1.5], atol=1e-14)
    np.testing.assert_allclose(solve_chain_exact([1.0, 1.0, 1.0], [1, 2, 3], [1, 1], 7.0), [1, 1, 1])
    f = np.array([3.0, -1.0, 2.0])
    out = solve_chain_exact(f, [1, 1, 1], [1, 1], 0.0)
    assert np.array_equal(out, f)


def test_chain_topology_errors():
    with pytest.raises(TopologyError):
        solve_chain_exact([0.0, 1.0, 2.0], [1, 1, 1], [1], 0.5)
    star = WeightedGraph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    with pytest.raises(TopologyError):
        solve_chain_graph(star, np.zeros(4), 1.0)


def test_chain_graph_any_orientation(rng):
    perm = rng.permutation(8)
    edges = [(perm[i + 1], perm[i]) if i % 2 else (perm[i], perm[i + 1]) for i in range(7)]
    w = rng.uniform(0.5, 2, 8)
    g = WeightedGraph.from_edges(8, edges, vertex_weights=w, edge_weights=rng.uniform(0.5, 2, 7))
    f = rng.uniform(-1, 1, 8)
    np.testing.assert_allclose(solve_chain_graph(g, f, 0.2), solve_rof(g, f, 0.2).u, atol=1e-9)


def test_taut_string_is_inside_tube(rng):
    n = 40
    x = np.cumsum(rng.uniform(0.5, 1.5, n + 1)) - 0.5
    x[0] = 0.0
    c = np.concatenate([[0], np.cumsum(rng.uniform(-1, 1, n))])
    r = np.concatenate([[0], rng.uniform(0.1, 0.5, n - 1), [0]])
    slopes = taut_string(x, c - r, c + r)
    y = np.concatenate([[0], np.cumsum(slopes * np.diff(x))])
    assert np.all(y >= c - r - 1e-12) and np.all(y <= c + r + 1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(2, 80), st.sampled_from([0.01, 0.1, 1.0, 5.0]))
def test_chain_oracle_equivalence(seed, n, alpha):
    rng = np.random.default_rng(seed)
    g = random_chain(rng, n)
    f = rng.uniform(-1, 1, n)
    u = solve_rof(g, f, alpha).u
    ref = solve_chain_exact(f, g.vertex_weights, g.edge_weights, alpha)
    assert np.max(np.abs(u - ref)) <= 1e-6 * max(np.ptp(f), 1e-300)


@pytest.mark.parametrize("g", small_graphs(7, 8), ids=lambda g: f"n{g.n_vertices}m{g.n_edges}")
def test_solution_properties(g):
    rng = np.random.default_rng(g.n_edges)
    f = rng.uniform(-1, 1, g.n_vertices)
    alpha = 0.3
    sol = solve_rof(g, f, alpha)
    assert verify_optimality(g, f, alpha, sol.u, sol.H, 1e-8)
    assert np.all(np.abs(sol.H) <= alpha)
    np.testing.assert_allclose(sol.u, f - weighted_divergence(g, sol.H), atol=1e-12)
    # mean is preserved on every component
    for c in np.unique(g.components):
        sel = g.components == c
        assert np.dot(g.vertex_weights[sel], sol.u[sel]) == pytest.approx(
            np.dot(g.vertex_weights[sel], f[sel]), abs=1e-10)
    # minimal weighted norm over the translated box image
    best = weighted_norm(g, sol.u)
    for _ in range(100):
        H = alpha * (2 * rng.random(g.n_edges) - 1)
        assert best <= weighted_norm(g, f - weighted_divergence(g, H)) + 1e-9
    # primal optimality against perturbations
    p0 = primal_objective(g, f, alpha, sol.u)
    for _ in range(50):
        assert p0 <= primal_objective(g, f, alpha, sol.u + 1e-3 * rng.standard_normal(g.n_vertices)) + 1e-12


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_scaling_equivariance(rng, c):
    g = random_graph(rng, 30, 60)
    f = rng.uniform(-1, 1, 30)
    u1 = solve_rof(g, f, 0.2).u
    u2 = solve_rof(g, c * f, c * 0.2).u
    np.testing.assert_allclose(u2, c * u1, atol=1e-8 * c)


def test_global_step_rule_agrees(rng):
    g = random_graph(rng, 40, 80)
    f = rng.uniform(-1, 1, 40)
    a = solve_rof(g, f, 0.1, step_rule="global").u
    b = solve_rof(g, f, 0.1).u
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_solver_is_deterministic(rng):
    g = random_graph(rng, 300, 900)
    f = rng.uniform(-1, 1, 300)
    a = solve_rof(g, f, 0.1)
    b = solve_rof(g, f, 0.1)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.H, b.H) and a.iterations == b.iterations
