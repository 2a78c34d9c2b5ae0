"""Rectilinear grids, PCR functions and piecewise affine fields.

A :class:`Grid` is given by strictly increasing breakpoints on every axis,
including the two endpoints of the domain.  Its cells are numbered in
row-major order (last axis fastest), and a piecewise constant function on the
grid (a :class:`PcrFunction`) stores one value per cell in that order.

The graph of a grid has one vertex per cell, weighted by the cell volume, and
one edge per pair of cells sharing a face, weighted by the face area.  Edges
are listed axis by axis and, within an axis, by the row-major index of the
lower cell; every edge points from the lower cell to the upper one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from anisotv.errors import InvariantError, RefinementError, ShapeError
from anisotv.graph import WeightedGraph, weighted_divergence


@dataclass(frozen=True, eq=False)
class Grid:
    breakpoints: tuple

    def __post_init__(self):
        axes = []
        for i, bp in enumerate(self.breakpoints):
            bp = np.array(bp, dtype=float).reshape(-1)
            if bp.size < 2:
                raise InvariantError(f"axis {i} needs at least 2 breakpoints, got {bp.size}")
            if not np.all(np.isfinite(bp)):
                raise InvariantError(f"axis {i} has non-finite breakpoints")
            if np.any(np.diff(bp) <= 0):
                raise InvariantError(f"axis {i} breakpoints are not strictly increasing")
            bp.setflags(write=False)
            axes.append(bp)
        if not axes:
            raise InvariantError("grid needs at least one axis")
        object.__setattr__(self, "breakpoints", tuple(axes))

    @classmethod
    def uniform(cls, shape: Sequence[int], domain=None) -> "Grid":
        """Equal cells; ``domain`` is a list of ``(a, b)`` and defaults to ``(0, n)``."""
        shape = tuple(int(n) for n in shape)
        if domain is None:
            domain = [(0.0, float(n)) for n in shape]
        if len(domain) != len(shape):
            raise ShapeError("domain and shape have different dimensions")
        axes = []
        for n, (a, b) in zip(shape, domain):
            if n < 1:
                raise InvariantError("every axis needs at least one cell")
            if float(a) == 0.0 and float(b) == float(n):
                axes.append(np.arange(n + 1, dtype=float))
            else:
                axes.append(a + (b - a) * np.arange(n + 1) / n)
        return cls(tuple(axes))

    @property
    def dim(self) -> int:
        return len(self.breakpoints)

    @property
    def shape(self) -> tuple:
        return tuple(bp.size - 1 for bp in self.breakpoints)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def domain(self) -> list:
        return [(float(bp[0]), float(bp[-1])) for bp in self.breakpoints]

    @property
    def lengths(self) -> tuple:
        return tuple(np.diff(bp) for bp in self.breakpoints)

    @cached_property
    def volumes(self) -> np.ndarray:
        vol = np.ones(())
        for h in self.lengths:
            vol = np.multiply.outer(vol, h)
        return vol.reshape(-1)

    @property
    def longest_diagonal(self) -> float:
        return float(np.sqrt(sum(np.max(h) ** 2 for h in self.lengths)))

    def same_as(self, other: "Grid") -> bool:
        return self.dim == other.dim and all(
            a.size == b.size and np.array_equal(a, b)
            for a, b in zip(self.breakpoints, other.breakpoints)
        )

    def coarse_index(self, coarse: "Grid", rtol: float = 1e-12) -> list:
        """Position of each coarse breakpoint among this grid's breakpoints.

        Raises :class:`RefinementError` unless this grid refines ``coarse``.
        """
        if coarse.dim != self.dim:
            raise RefinementError(f"grids have dimensions {self.dim} and {coarse.dim}")
        out = []
        for axis, (fine, crs) in enumerate(zip(self.breakpoints, coarse.breakpoints)):
            scale = rtol * max(1.0, fine[-1] - fine[0], abs(fine[0]), abs(fine[-1]))
            pos = np.clip(np.searchsorted(fine, crs), 0, fine.size - 1)
            left = np.clip(pos - 1, 0, fine.size - 1)
            pos = np.where(np.abs(fine[left] - crs) < np.abs(fine[pos] - crs), left, pos)
            if np.any(np.abs(fine[pos] - crs) > scale):
                raise RefinementError(f"axis {axis}: breakpoints of the coarse grid are missing")
            if pos[0] != 0 or pos[-1] != fine.size - 1:
                raise RefinementError(f"axis {axis}: grids cover different domains")
            out.append(pos)
        return out

    def refines(self, coarse: "Grid") -> bool:
        try:
            self.coarse_index(coarse)
        except RefinementError:
            return False
        return True

    @cached_property
    def partition(self) -> "Partition":
        return build_partition(self)

    @cached_property
    def graph(self) -> WeightedGraph:
        return build_graph(self.partition)

    def cell_centers(self) -> np.ndarray:
        mids = [0.5 * (bp[1:] + bp[:-1]) for bp in self.breakpoints]
        mesh = np.meshgrid(*mids, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class Partition:
    """Cells and shared sides of a grid.

    ``cells`` holds the multi-index of every cell (row-major order) and
    ``volumes`` its volume.  Side ``s`` separates cells ``lower[s]`` and
    ``upper[s] = lower[s] + e_axis`` and has ``(d-1)``-dimensional measure
    ``measure[s]``; in one dimension that measure counts points, so it is 1.
    """

    grid: Grid
    cells: np.ndarray
    volumes: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    axis: np.ndarray
    measure: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.volumes.size

    @property
    def n_sides(self) -> int:
        return self.measure.size


def build_partition(grid: Grid) -> Partition:
    shape = grid.shape
    idx = np.arange(grid.n_cells).reshape(shape)
    cells = np.stack(np.unravel_index(np.arange(grid.n_cells), shape), axis=1)
    lower, upper, axis, measure = [], [], [], []
    lengths = grid.lengths
    for a in range(grid.dim):
        if shape[a] < 2:
            continue
        lo = np.take(idx, np.arange(shape[a] - 1), axis=a)
        hi = np.take(idx, np.arange(1, shape[a]), axis=a)
        face = np.ones(())
        for b in range(grid.dim):
            face = np.multiply.outer(face, lengths[b] if b != a else np.ones(shape[a] - 1))
        lower.append(lo.reshape(-1))
        upper.append(hi.reshape(-1))
        axis.append(np.full(lo.size, a))
        measure.append(face.reshape(-1))
    if lower:
        lower, upper = np.concatenate(lower), np.concatenate(upper)
        axis, measure = np.concatenate(axis), np.concatenate(measure)
    else:
        lower = upper = axis = np.zeros(0, dtype=np.int64)
        measure = np.zeros(0)
    return Partition(grid, cells, grid.volumes.copy(), lower, upper, axis, measure)


def build_graph(partition: Partition) -> WeightedGraph:
    return WeightedGraph(partition.lower, partition.upper, partition.volumes, partition.measure)


@dataclass(frozen=True, eq=False)
class PcrFunction:
    """Piecewise constant function: one value per grid cell, row-major."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.n_cells:
            raise ShapeError(f"{values.size} values for a grid with {self.grid.n_cells} cells")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def integral(self, phi=None) -> float:
        """``int phi(g) dx`` as a volume-weighted sum over cells."""
        vals = self.values if phi is None else phi(self.values)
        return float(np.dot(self.grid.volumes, vals))

    def norm(self, p=2.0) -> float:
        from anisotv.graph import lp_norm

        return lp_norm(self.values, self.grid.volumes, p)

    def on(self, fine: Grid) -> "PcrFunction":
        """The same function represented on a refinement of its grid."""
        idx = fine.coarse_index(self.grid)
        arr = self.as_array()
        for a, pos in enumerate(idx):
            arr = np.repeat(arr, np.diff(pos), axis=a)
        return PcrFunction(fine, arr)

    def __add__(self, other):
        return PcrFunction(self.grid, self.values + _values(other, self.grid))

    def __sub__(self, other):
        return PcrFunction(self.grid, self.values - _values(other, self.grid))

    def __mul__(self, c):
        return PcrFunction(self.grid, self.values * float(c))

    __rmul__ = __mul__


def _values(other, grid):
    if isinstance(other, PcrFunction):
        if not (other.grid is grid or other.grid.same_as(grid)):
            raise ShapeError("PCR functions live on different grids")
        return other.values
    return np.asarray(other, dtype=float)


def average(grid: Grid, g: PcrFunction) -> PcrFunction:
    """Cellwise volume mean of ``g`` over the cells of ``grid``.

    ``g`` must live on a refinement of ``grid``.
    """
    if g.grid is grid or g.grid.same_as(grid):
        return PcrFunction(grid, g.values.copy())
    idx = g.grid.coarse_index(grid)
    mass = (g.values * g.grid.volumes).reshape(g.grid.shape)
    for a, pos in enumerate(idx):
        mass = np.add.reduceat(mass, pos[:-1], axis=a)
    return PcrFunction(grid, mass.reshape(-1) / grid.volumes)


def iota(f: PcrFunction) -> np.ndarray:
    """Cell values of a PCR function as a vertex function of the grid graph."""
    return f.values.copy()


def iota_inv(u, grid: Grid) -> PcrFunction:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size != grid.n_cells:
        raise ShapeError(f"vertex function of size {u.size} for {grid.n_cells} cells")
    return PcrFunction(grid, u)


def refine_grid(grid: Grid, factor: int) -> Grid:
    """Split every interval into ``factor`` equal parts, keeping old breakpoints."""
    factor = int(factor)
    if factor < 2:
        raise ValueError(f"refinement factor must be >= 2, got {factor}")
    axes = []
    for bp in grid.breakpoints:
        h = np.diff(bp)
        frac = np.arange(factor) / factor
        pts = (bp[:-1, None] + h[:, None] * frac[None, :]).reshape(-1)
        pts[::factor] = bp[:-1]
        axes.append(np.append(pts, bp[-1]))
    return Grid(tuple(axes))


def coarsen_grid(grid: Grid, stride: int) -> Grid:
    """Keep every ``stride``-th breakpoint on each axis (and both endpoints)."""
    stride = int(stride)
    if stride < 1:
        raise ValueError("stride must be positive")
    axes = []
    for bp in grid.breakpoints:
        keep = bp[::stride]
        if keep[-1] != bp[-1]:
            keep = np.append(keep, bp[-1])
        axes.append(keep)
    return Grid(tuple(axes))


def pcr_rof_objective(partition: Partition, f, u, alpha) -> float:
    """ROF energy of a PCR function, computed from cells and sides directly."""
    f = np.asarray(f.values if isinstance(f, PcrFunction) else f, dtype=float)
    u = np.asarray(u.values if isinstance(u, PcrFunction) else u, dtype=float)
    fidelity = 0.5 * np.sum(partition.volumes * (f - u) ** 2)
    jumps = np.abs(u[partition.upper] - u[partition.lower])
    return float(fidelity + alpha * np.sum(partition.measure * jumps))


@dataclass(frozen=True, eq=False)
class ParField:
    """Piecewise affine vector field: ``F_i = slope[k, i] * x_i + offset[k, i]`` on cell ``k``."""

    grid: Grid
    slope: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        shape = (self.grid.n_cells, self.grid.dim)
        for name in ("slope", "offset"):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def _face_values(self):
        """Component ``a`` on the lower and upper face of every cell along axis ``a``."""
        cells = np.stack(np.unravel_index(np.arange(self.grid.n_cells), self.grid.shape), axis=1)
        lo = np.empty_like(self.slope)
        hi = np.empty_like(self.slope)
        for a, bp in enumerate(self.grid.breakpoints):
            i = cells[:, a]
            lo[:, a] = self.slope[:, a] * bp[i] + self.offset[:, a]
            hi[:, a] = self.slope[:, a] * bp[i + 1] + self.offset[:, a]
        return cells, lo, hi

    def violations(self) -> dict:
        """Largest continuity jump and boundary value of the normal components."""
        cells, lo, hi = self._face_values()
        part = self.grid.partition
        cont = 0.0
        if part.n_sides:
            a = part.axis
            cont = float(np.max(np.abs(hi[part.lower, a] - lo[part.upper, a])))
        bnd = 0.0
        for a, n in enumerate(self.grid.shape):
            first = cells[:, a] == 0
            last = cells[:, a] == n - 1
            bnd = max(bnd, float(np.max(np.abs(lo[first, a]))), float(np.max(np.abs(hi[last, a]))))
        return {"continuity": cont, "boundary": bnd}

    def check(self, atol=1e-9):
        scale = max(1.0, float(np.max(np.abs(self._face_values()[1]), initial=0.0)))
        for name, value in self.violations().items():
            if value > atol * scale:
                raise InvariantError(f"ParField {name} condition violated by {value:.3e}")
        return self

    def evaluate(self, points) -> np.ndarray:
        """Field values at points; points on a face use the cell above it."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        multi = []
        for a, bp in enumerate(self.grid.breakpoints):
            i = np.clip(np.searchsorted(bp, points[:, a], side="right") - 1, 0, bp.size - 2)
            multi.append(i)
        k = np.ravel_multi_index(tuple(multi), self.grid.shape)
        return self.slope[k] * points + self.offset[k]


def kappa(F: ParField, check: bool = True) -> np.ndarray:
    """Normal component of ``F`` on every side, as an edge function.

    The normal is taken against the edge direction, so an edge running
    along ``+x_a`` reads ``-F_a`` on its face.
    """
    if check:
        F.check()
    part = F.grid.partition
    _, _, hi = F._face_values()
    return -hi[part.lower, part.axis]


def kappa_inv(H, grid: Grid) -> ParField:
    """The piecewise affine field whose normal components are ``H``."""
    part = grid.partition
    H = np.asarray(H, dtype=float)
    if H.ndim != 1 or H.size != part.n_sides:
        raise ShapeError(f"edge function of size {H.size} for {part.n_sides} sides")
    n, d = grid.n_cells, grid.dim
    lo = np.zeros((n, d))
    hi = np.zeros((n, d))
    face = -H
    hi[part.lower, part.axis] = face
    lo[part.upper, part.axis] = face
    cells = part.cells
    slope = np.empty((n, d))
    offset = np.empty((n, d))
    for a, bp in enumerate(grid.breakpoints):
        x0 = bp[cells[:, a]]
        x1 = bp[cells[:, a] + 1]
        slope[:, a] = (hi[:, a] - lo[:, a]) / (x1 - x0)
        # anchored at the upper face, which is where kappa reads the field
        offset[:, a] = hi[:, a] - slope[:, a] * x1
    return ParField(grid, slope, offset)


def par_divergence(F: ParField, check: bool = True) -> PcrFunction:
    """Weak divergence of ``F``: the sum of the per-cell slopes."""
    if check:
        F.check()
    return PcrFunction(F.grid, F.slope.sum(axis=1))


def sample_subgradient(grid: Grid, alpha: float, seed) -> PcrFunction:
    """Divergence of a field drawn uniformly from the box ``|H| <= alpha``.

    The result is a PCR element of ``alpha`` times the subdifferential of
    the total variation at zero.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    g = grid.graph
    H = alpha * (2.0 * rng.random(g.n_edges) - 1.0)
    return iota_inv(weighted_divergence(g, H), grid)


def rasterize(func, grid: Grid) -> PcrFunction:
    """Sample ``func`` at cell midpoints.

    This only approximates the cell means of a general function; it is the
    way non-PCR data enter the grid routines.  ``func`` takes an ``(N, d)``
    array of points and returns ``N`` values.
    """
    vals = np.asarray(func(grid.cell_centers()), dtype=float).reshape(-1)
    return PcrFunction(grid, vals)
