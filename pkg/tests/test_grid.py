import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anisotv.errors import InvariantError, RefinementError, ShapeError
from anisotv.graph import total_variation, vertex_pairing, weighted_divergence, weighted_norm
from anisotv.grid import (
    Grid,
    ParField,
    PcrFunction,
    average,
    build_graph,
    build_partition,
    coarsen_grid,
    iota,
    iota_inv,
    kappa,
    kappa_inv,
    par_divergence,
    pcr_rof_objective,
    rasterize,
    refine_grid,
    sample_subgradient,
)
from anisotv.minimality import convex_catalog
from anisotv.rof import primal_objective, solve_rof


def random_grid(rng, dim=None, max_cells=60):
    dim = dim or int(rng.integers(1, 4))
    per_axis = max(1, int(round(max_cells ** (1 / dim))))
    axes = []
    for _ in range(dim):
        n = int(rng.integers(1, per_axis + 1))
        a = rng.uniform(-1, 1)
        axes.append(a + np.concatenate([[0], np.cumsum(rng.uniform(0.1, 1.0, n))]))
    return Grid(tuple(axes))


def random_parfield(rng, grid):
    return kappa_inv(rng.uniform(-1, 1, grid.graph.n_edges), grid)


grids = st.integers(0, 2**31 - 1).map(lambda s: random_grid(np.random.default_rng(s)))


def test_grid_validation():
    with pytest.raises(InvariantError):
        Grid(([0.0],))
    with pytest.raises(InvariantError):
        Grid(([0.0, 1.0, 1.0],))
    with pytest.raises(InvariantError):
        Grid(())


def test_partition_1d():
    p = build_partition(Grid(([0, 0.5, 1],)))
    assert p.n_cells == 2 and p.n_sides == 1 and p.measure[0] == 1.0
    np.testing.assert_array_equal(p.volumes, [0.5, 0.5])


def test_partition_single_cell():
    p = build_partition(Grid(([0, 1], [0, 1])))
    assert p.n_cells == 1 and p.n_sides == 0


def test_partition_split_2d():
    p = build_partition(Grid(([0, 0.3, 1], [0, 1])))
    assert p.n_cells == 2 and p.n_sides == 1 and p.measure[0] == 1.0


def test_graph_2x2():
    g = build_graph(build_partition(Grid.uniform((2, 2), [(0, 1), (0, 1)])))
    np.testing.assert_array_equal(g.vertex_weights, [0.25] * 4)
    np.testing.assert_array_equal(g.edge_weights, [0.5] * 4)
    # only axis neighbours, no diagonals
    assert {tuple(e) for e in g.edges} == {(0, 2), (1, 3), (0, 1), (2, 3)}


def test_graph_1d_and_strip():
    g = Grid(([0, 0.3, 1.0],)).graph
    np.testing.assert_allclose(g.vertex_weights, [0.3, 0.7])
    np.testing.assert_array_equal(g.edge_weights, [1.0])
    strip = Grid.uniform((1, 3)).graph
    assert strip.n_edges == 2 and [tuple(e) for e in strip.edges] == [(0, 1), (1, 2)]


def test_side_measures_anisotropic():
    grid = Grid(([0, 1, 3], [0, 2], [0, 0.5, 1.5]))
    p = grid.partition
    for k, l, a, meas in zip(p.lower, p.upper, p.axis, p.measure):
        other = [np.diff(grid.breakpoints[b])[p.cells[k][b]] for b in range(3) if b != a]
        assert meas == pytest.approx(np.prod(other))
        diff = p.cells[l] - p.cells[k]
        assert diff[a] == 1 and np.sum(np.abs(diff)) == 1


@given(grids)
def test_cells_tile_domain(grid):
    vol = np.prod([b - a for a, b in grid.domain])
    assert grid.volumes.sum() == pytest.approx(vol, rel=1e-12)


def test_average_examples():
    fine = Grid(([0, 0.5, 1],))
    coarse = Grid(([0, 1],))
    assert average(coarse, PcrFunction(fine, [1.0, 3.0])).values[0] == 2.0
    g = PcrFunction(fine, [1.0, 3.0])
    assert np.array_equal(average(fine, g).values, g.values)


def test_average_requires_nesting():
    with pytest.raises(RefinementError):
        average(Grid(([0, 0.4, 1],)), PcrFunction(Grid(([0, 0.5, 1],)), [1.0, 2.0]))
    with pytest.raises(RefinementError):
        average(Grid(([0, 2],)), PcrFunction(Grid(([0, 0.5, 1],)), [1.0, 2.0]))


@given(st.integers(0, 2**31 - 1))
def test_average_properties(seed):
    rng = np.random.default_rng(seed)
    coarse = random_grid(rng, max_cells=30)
    fine = refine_grid(coarse, int(rng.integers(2, 4)))
    g = PcrFunction(fine, rng.uniform(-2, 2, fine.n_cells))
    a = average(coarse, g)
    assert a.integral() == pytest.approx(g.integral(), rel=1e-12, abs=1e-12)
    assert np.array_equal(average(coarse, a).values, a.values)
    # oracle: loop over fine cells and sum into the containing coarse cell
    centers = fine.cell_centers()
    idx = [np.searchsorted(bp, centers[:, i]) - 1 for i, bp in enumerate(coarse.breakpoints)]
    k = np.ravel_multi_index(tuple(idx), coarse.shape)
    mass = np.bincount(k, weights=g.values * fine.volumes, minlength=coarse.n_cells)
    np.testing.assert_allclose(a.values, mass / coarse.volumes, rtol=1e-12, atol=1e-12)
    # the coarse representation of a coarse function is recovered exactly
    c = PcrFunction(coarse, rng.uniform(-1, 1, coarse.n_cells))
    np.testing.assert_allclose(average(coarse, c.on(fine)).values, c.values, rtol=1e-13)


def test_iota_examples():
    grid = Grid(([0, 0.3, 1.0],))
    f = PcrFunction(grid, [1.0, 2.0])
    assert np.array_equal(iota(f), [1.0, 2.0])
    assert np.array_equal(iota_inv(iota(f), grid).values, f.values)
    assert f.norm(2) ** 2 == pytest.approx(3.1)
    assert weighted_norm(grid.graph, iota(f)) ** 2 == pytest.approx(3.1)
    with pytest.raises(ShapeError):
        iota_inv([1.0], grid)
    with pytest.raises(ShapeError):
        PcrFunction(grid, [1.0, 2.0, 3.0])


@given(grids, st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_iota_linear(grid, a, b, seed):
    rng = np.random.default_rng(seed)
    f = PcrFunction(grid, rng.uniform(-1, 1, grid.n_cells))
    g = PcrFunction(grid, rng.uniform(-1, 1, grid.n_cells))
    np.testing.assert_allclose(iota(a * f + b * g), a * iota(f) + b * iota(g), rtol=1e-14, atol=1e-14)


def tent():
    grid = Grid(([0, 0.5, 1],))
    # U(0) = 0, U(0.5) = 1, U(1) = 0
    return ParField(grid, [[2.0], [-2.0]], [[0.0], [2.0]])


def test_tent_field():
    F = tent()
    assert kappa(F)[0] == -1.0
    assert np.array_equal(par_divergence(F).values, [2.0, -2.0])
    assert np.array_equal(weighted_divergence(F.grid.graph, kappa(F)), [2.0, -2.0])
    np.testing.assert_allclose(F.evaluate([[0.0], [0.25], [0.5], [1.0]])[:, 0], [0, 0.5, 1, 0])


def test_zero_field():
    grid = Grid(([0, 1, 2], [0, 1, 3]))
    F = ParField(grid, np.zeros((4, 2)), np.zeros((4, 2)))
    assert not np.any(kappa(F)) and not np.any(par_divergence(F).values)


def test_field_invariants_enforced():
    grid = Grid(([0, 0.5, 1],))
    with pytest.raises(InvariantError):
        kappa(ParField(grid, [[2.0], [-2.0]], [[0.0], [2.5]]))
    with pytest.raises(InvariantError):
        par_divergence(ParField(grid, [[1.0], [1.0]], [[0.0], [0.0]]))


@given(st.integers(0, 2**31 - 1))
def test_kappa_round_trip_unit_domain(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 4))
    axes = []
    for _ in range(dim):
        h = rng.uniform(0.5, 1.5, int(rng.integers(1, 7)))
        bp = np.concatenate([[0.0], np.cumsum(h) / h.sum()])
        bp[-1] = 1.0
        axes.append(bp)
    grid = Grid(tuple(axes))
    H = rng.uniform(-1, 1, grid.graph.n_edges)
    F = kappa_inv(H, grid)
    assert max(F.violations().values()) <= 1e-13
    np.testing.assert_allclose(kappa(F), H, rtol=0, atol=1e-14)


@given(st.integers(0, 2**31 - 1))
def test_kappa_round_trip_general(seed):
    # away from the unit cube the error is rounding in slope * x
    rng = np.random.default_rng(seed)
    grid = random_grid(rng, max_cells=80)
    H = rng.uniform(-1, 1, grid.graph.n_edges)
    F = kappa_inv(H, grid)
    xmax = max(np.max(np.abs(bp)) for bp in grid.breakpoints)
    bound = 4 * np.finfo(float).eps * max(1.0, np.max(np.abs(F.slope)) * xmax)
    assert np.max(np.abs(kappa(F) - H)) <= bound


@given(st.integers(0, 2**31 - 1))
def test_diagram_commutes(seed):
    rng = np.random.default_rng(seed)
    grid = random_grid(rng, max_cells=80)
    F = random_parfield(rng, grid)
    lhs = iota(par_divergence(F))
    rhs = weighted_divergence(grid.graph, kappa(F))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_kappa_inv_field_interpolates_face_values(rng):
    grid = Grid(([0, 1, 2.5, 3], [0, 2, 3]))
    H = rng.uniform(-1, 1, grid.graph.n_edges)
    F = kappa_inv(H, grid)
    p = grid.partition
    # evaluate on each side at its center from the lower cell: value is -H
    for s in range(p.n_sides):
        k, a = p.lower[s], p.axis[s]
        x = np.array([0.5 * (bp[i] + bp[i + 1]) for bp, i in zip(grid.breakpoints, p.cells[k])])
        x[a] = grid.breakpoints[a][p.cells[k][a] + 1]
        val = F.slope[k, a] * x[a] + F.offset[k, a]
        assert val == pytest.approx(-H[s], abs=1e-14)


def test_sample_subgradient_examples():
    grid = Grid(([0, 0.5, 1],))
    for seed in range(10):
        g = sample_subgradient(grid, 0.7, seed)
        assert abs(g.integral()) <= 1e-15
        g2 = sample_subgradient(grid, 1.4, seed)
        np.testing.assert_array_equal(g2.values, 2 * g.values)
    with pytest.raises(ValueError):
        sample_subgradient(grid, 0.0, 1)


@pytest.mark.parametrize("seed", range(5))
def test_sample_subgradient_inequality(seed):
    rng = np.random.default_rng(seed)
    grid = random_grid(rng, dim=2, max_cells=40)
    alpha = 0.8
    g = sample_subgradient(grid, alpha, seed)
    G = grid.graph
    for _ in range(200):
        v = rng.standard_normal(grid.n_cells)
        assert alpha * total_variation(G, v) - vertex_pairing(G, iota(g), v) >= -1e-10


def test_refine_grid_examples():
    r = refine_grid(Grid(([0, 1],)), 2)
    np.testing.assert_array_equal(r.breakpoints[0], [0, 0.5, 1])
    sq = Grid(([0, 1], [0, 1]))
    assert refine_grid(sq, 4).longest_diagonal == pytest.approx(np.sqrt(2) / 4)
    with pytest.raises(ValueError):
        refine_grid(sq, 1)


@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_refine_grid_nests(seed, k):
    rng = np.random.default_rng(seed)
    grid = random_grid(rng, max_cells=30)
    fine = refine_grid(grid, k)
    assert fine.refines(grid)
    for bp, fb in zip(grid.breakpoints, fine.breakpoints):
        assert np.array_equal(fb[::k], bp)
    assert fine.longest_diagonal == pytest.approx(grid.longest_diagonal / k, rel=1e-12)
    f = PcrFunction(grid, rng.uniform(-1, 1, grid.n_cells))
    assert f.on(fine).integral() == pytest.approx(f.integral(), rel=1e-12, abs=1e-14)


def test_coarsen_grid():
    grid = Grid.uniform((5,))
    np.testing.assert_array_equal(coarsen_grid(grid, 2).breakpoints[0], [0, 2, 4, 5])
    assert grid.refines(coarsen_grid(grid, 4))


@pytest.mark.parametrize("seed", range(8))
def test_jensen_contraction(seed):
    rng = np.random.default_rng(seed)
    coarse = random_grid(rng, max_cells=30)
    fine = refine_grid(coarse, 3)
    for probe in convex_catalog():
        u = PcrFunction(fine, rng.uniform(-2, 2, fine.n_cells))
        assert average(coarse, u).integral(probe) <= u.integral(probe) + 1e-12 * max(1, abs(u.integral(probe)))


@pytest.mark.parametrize("seed", range(5))
def test_averaged_subgradient_stays_subgradient(seed):
    rng = np.random.default_rng(seed)
    coarse = random_grid(rng, dim=2, max_cells=20)
    fine = refine_grid(coarse, 2)
    g = average(coarse, sample_subgradient(fine, 0.5, seed))
    G = coarse.graph
    for _ in range(200):
        v = rng.standard_normal(coarse.n_cells)
        assert 0.5 * total_variation(G, v) - vertex_pairing(G, g.values, v) >= -1e-10


@pytest.mark.parametrize("seed", range(4))
def test_rof_objective_in_pcr_form(seed):
    rng = np.random.default_rng(seed)
    grid = random_grid(rng, max_cells=60)
    f = PcrFunction(grid, rng.uniform(-1, 1, grid.n_cells))
    sol = solve_rof(grid.graph, iota(f), 0.2)
    pcr = pcr_rof_objective(grid.partition, f, iota_inv(sol.u, grid), 0.2)
    assert pcr == pytest.approx(primal_objective(grid.graph, iota(f), 0.2, sol.u), rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_solution_stays_on_data_grid(seed):
    rng = np.random.default_rng(seed)
    grid = random_grid(rng, dim=2, max_cells=30)
    f = PcrFunction(grid, rng.uniform(-1, 1, grid.n_cells))
    tol = 1e-9
    u = solve_rof(grid.graph, iota(f), 0.1, tol).u
    for k in (2, 4):
        fine = refine_grid(grid, k)
        uf = iota_inv(solve_rof(fine.graph, f.on(fine).values, 0.1, tol).u, fine)
        assert np.max(np.abs(average(grid, uf).values - u)) <= 10 * tol
        # the fine solution is itself constant on coarse cells
        np.testing.assert_allclose(uf.values, average(grid, uf).on(fine).values, atol=10 * tol)


def test_rasterize():
    grid = Grid.uniform((4,), [(0, 1)])
    f = rasterize(lambda x: x[:, 0] ** 2, grid)
    np.testing.assert_allclose(f.values, [0.125**2, 0.375**2, 0.625**2, 0.875**2])
