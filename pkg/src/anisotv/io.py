"""Readers and writers for signals, images, tensors, grids, graphs and polytopes.

Supported formats (``format_hint`` names in brackets):

* ``.csv`` [csv]: one value per line is a signal; several comma separated
  values per line form an image, one line per row.
* ``.pgm`` [pgm]: plain (P2) and raw (P5) graymaps with maxval up to 65535.
* ``.t`` [tensor]: whitespace separated text; ``d``, then ``d`` sizes, then
  the domain as ``d`` lengths or ``2d`` numbers ``a_1 b_1 ... a_d b_d``, then
  the values in row-major order.
* ``.grid`` [grid]: ``d`` on the first line, then one line of breakpoints per axis.
* ``.pcr`` [pcr]: first line ``grid,<path of a .grid file>`` (relative to the
  .pcr file), then the cell values in row-major order, comma separated.
* ``.graph`` [graph]: header ``n_vertices n_edges``, one line per vertex
  holding its weight and optionally a datum value, then one line ``i j W``
  per edge with 0-based vertex indices.
* ``.poly`` [polytope]: one vertex per line, comma separated coordinates.

Lines starting with ``#`` are comments in every text format.  Uniform data
(signals, images, tensors) live on unit cells unless a domain says otherwise;
an image with ``h`` rows and ``w`` columns has axis 0 along the rows, so its
domain is ``(0, h) x (0, w)``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from anisotv.errors import AnisoTVError, ParseError
from anisotv.graph import WeightedGraph
from anisotv.grid import Grid

FORMATS = ("csv", "pgm", "tensor", "grid", "pcr", "graph", "polytope")
_EXTENSIONS = {
    ".csv": "csv", ".pgm": "pgm", ".t": "tensor", ".grid": "grid",
    ".pcr": "pcr", ".graph": "graph", ".poly": "polytope",
}


@dataclass(eq=False)
class Dataset:
    """Input data for the command line tool.

    ``kind`` is ``signal``, ``image`` or ``tensor`` for data on a grid,
    ``graph`` for vertex data on a weighted graph and ``polytope`` for a
    vertex list.  ``values`` are row-major cell values or vertex values.
    """

    kind: str
    values: np.ndarray
    grid: Grid | None = None
    graph: WeightedGraph | None = None
    fmt: str = "csv"
    maxval: int | None = None
    grid_path: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.grid is not None and self.values.size != self.grid.n_cells:
            raise ParseError(f"{self.values.size} values for {self.grid.n_cells} cells")
        if self.graph is not None and self.values.size != self.graph.n_vertices:
            raise ParseError(f"{self.values.size} values for {self.graph.n_vertices} vertices")

    @property
    def shape(self):
        return self.grid.shape if self.grid is not None else self.values.shape

    @property
    def domain(self):
        return self.grid.domain if self.grid is not None else None

    @property
    def solver_graph(self) -> WeightedGraph:
        if self.graph is not None:
            return self.graph
        if self.grid is not None:
            return self.grid.graph
        raise AnisoTVError(f"a {self.kind} dataset has no graph")

    def with_values(self, values) -> "Dataset":
        return Dataset(self.kind, values, self.grid, self.graph, self.fmt, self.maxval, self.grid_path)


def detect_format(path, format_hint=None) -> str:
    if format_hint:
        if format_hint not in FORMATS:
            raise ParseError(f"unknown format {format_hint!r}", path)
        return format_hint
    fmt = _EXTENSIONS.get(Path(path).suffix.lower())
    if fmt is None:
        raise ParseError("cannot tell the format from the file name; pass a format hint", path)
    return fmt


def load_dataset(path, format_hint=None, normalize: bool = False) -> Dataset:
    """Read any supported file; ``normalize`` divides PGM pixels by maxval."""
    fmt = detect_format(path, format_hint)
    loader = {
        "csv": load_csv, "pgm": load_pgm, "tensor": load_tensor, "grid": _load_grid_dataset,
        "pcr": load_pcr, "graph": load_graph, "polytope": load_polytope,
    }[fmt]
    try:
        return load_pgm(path, normalize) if fmt == "pgm" else loader(path)
    except FileNotFoundError as exc:
        raise ParseError("file not found", path) from exc
    except UnicodeDecodeError as exc:
        raise ParseError("not a text file", path, byte=exc.start) from exc


def _text_lines(path):
    """Yield ``(line_number, stripped_line)`` for non-empty, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield no, line


def _floats(tokens, path, line):
    try:
        out = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"not a number: {exc}", path, line) from exc
    if not all(np.isfinite(out)):
        raise ParseError("non-finite value", path, line)
    return out


def _ints(tokens, path, line):
    try:
        return [int(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"not an integer: {exc}", path, line) from exc


def _fmt(x) -> str:
    # repr gives the shortest string that reads back to the same double
    return repr(float(x))


def load_csv(path) -> Dataset:
    rows = []
    first = None
    for no, line in _text_lines(path):
        row = _floats([t.strip() for t in line.split(",")], path, no)
        if first is None:
            first = len(row)
        elif len(row) != first:
            raise ParseError(f"expected {first} columns, found {len(row)}", path, no)
        rows.append(row)
    if not rows:
        raise ParseError("no values", path)
    arr = np.array(rows)
    if first == 1:
        return Dataset("signal", arr[:, 0], Grid.uniform((arr.shape[0],)), fmt="csv")
    return Dataset("image", arr.reshape(-1), Grid.uniform(arr.shape), fmt="csv")


def save_csv(path, values, shape=None):
    values = np.asarray(values, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        if shape is None or len(shape) == 1:
            for v in values.reshape(-1):
                fh.write(_fmt(v) + "\n")
        else:
            for row in values.reshape(shape[0], -1):
                fh.write(",".join(_fmt(v) for v in row) + "\n")


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*([^\s#]+)")


def load_pgm(path, normalize: bool = False) -> Dataset:
    data = Path(path).read_bytes()
    pos = 0
    header = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ParseError("truncated header", path, byte=pos)
        header.append((m.group(1), m.start(1)))
        pos = m.end(1)
    magic = header[0][0]
    if magic not in (b"P2", b"P5"):
        raise ParseError(f"unsupported magic number {magic!r}", path, byte=header[0][1])
    try:
        width, height, maxval = (int(t) for t, _ in header[1:])
    except ValueError as exc:
        raise ParseError("malformed header", path, byte=header[1][1]) from exc
    if width < 1 or height < 1:
        raise ParseError("image must have positive size", path, byte=header[1][1])
    if not 0 < maxval <= 65535:
        raise ParseError(f"unsupported maxval {maxval}", path, byte=header[3][1])
    count = width * height
    if magic == b"P2":
        tokens = data[pos:].split()
        if len(tokens) != count:
            raise ParseError(f"expected {count} pixel values, found {len(tokens)}", path, byte=pos)
        try:
            values = np.array([int(t) for t in tokens], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(f"bad pixel value: {exc}", path, byte=pos) from exc
    else:
        if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
            raise ParseError("missing whitespace after maxval", path, byte=pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - pos != need:
            raise ParseError(f"expected {need} bytes of pixel data, found {len(data) - pos}",
                             path, byte=pos)
        values = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.int64)
    if values.size and (values.min() < 0 or values.max() > maxval):
        raise ParseError("pixel value outside [0, maxval]", path, byte=pos)
    vals = values.astype(float)
    if normalize:
        vals = vals / maxval
    return Dataset("image", vals, Grid.uniform((height, width)), fmt="pgm", maxval=maxval)


def save_pgm(path, values, shape, maxval=255, binary=False, quantize=True):
    """Write a graymap.  Values are clamped to ``[0, maxval]`` and rounded when ``quantize`` is set."""
    values = np.asarray(values, dtype=float).reshape(shape)
    if quantize:
        ints = np.clip(np.rint(values), 0, maxval).astype(np.int64)
    else:
        ints = values.astype(np.int64)
        if not np.array_equal(ints, values) or ints.min() < 0 or ints.max() > maxval:
            raise ValueError("values are not integers in [0, maxval]; pass quantize=True")
    height, width = shape
    with open(path, "wb") as fh:
        fh.write(f"{'P5' if binary else 'P2'}\n{width} {height}\n{maxval}\n".encode())
        if binary:
            fh.write(ints.astype(">u2" if maxval > 255 else "u1").tobytes())
        else:
            for row in ints:
                fh.write((" ".join(str(v) for v in row) + "\n").encode())


def load_tensor(path) -> Dataset:
    tokens = []
    for no, line in _text_lines(path):
        tokens.extend((t, no) for t in line.split())
    if not tokens:
        raise ParseError("empty tensor file", path)
    d = _ints([tokens[0][0]], path, tokens[0][1])[0]
    if d < 1:
        raise ParseError("dimension must be at least 1", path, tokens[0][1])
    if len(tokens) < 1 + 2 * d:
        raise ParseError("truncated header", path, tokens[-1][1])
    shape = _ints([t for t, _ in tokens[1:1 + d]], path, tokens[1][1])
    if min(shape) < 1:
        raise ParseError("sizes must be positive", path, tokens[1][1])
    count = int(np.prod(shape))
    rest = tokens[1 + d:]
    # the domain is given either as d lengths or as 2d endpoints
    n_ext = 2 * d if len(rest) == 2 * d + count else d
    if len(rest) != n_ext + count:
        raise ParseError(f"expected {count} values after the header, found {len(rest) - d}",
                         path, rest[-1][1] if rest else None)
    ext = _floats([t for t, _ in rest[:n_ext]], path, rest[0][1])
    if n_ext == d:
        domain = [(0.0, L) for L in ext]
    else:
        domain = list(zip(ext[0::2], ext[1::2]))
    if any(b <= a for a, b in domain):
        raise ParseError("domain extents must be positive", path, rest[0][1])
    values = _floats([t for t, _ in rest[n_ext:]], path, rest[n_ext][1] if count else None)
    return Dataset("tensor", values, Grid.uniform(shape, domain), fmt="tensor")


def save_tensor(path, values, grid: Grid):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{grid.dim}\n")
        fh.write(" ".join(str(n) for n in grid.shape) + "\n")
        fh.write(" ".join(f"{_fmt(a)} {_fmt(b)}" for a, b in grid.domain) + "\n")
        for v in np.asarray(values, dtype=float).reshape(-1):
            fh.write(_fmt(v) + "\n")


def load_grid(path) -> Grid:
    lines = list(_text_lines(path))
    if not lines:
        raise ParseError("empty grid file", path)
    d = _ints(lines[0][1].split(), path, lines[0][0])
    if len(d) != 1 or d[0] < 1:
        raise ParseError("first line must hold the dimension", path, lines[0][0])
    if len(lines) != d[0] + 1:
        raise ParseError(f"expected {d[0]} breakpoint lines, found {len(lines) - 1}", path,
                         lines[-1][0])
    axes = []
    for no, line in lines[1:]:
        bp = _floats(line.replace(",", " ").split(), path, no)
        if len(bp) < 2 or np.any(np.diff(bp) <= 0):
            raise ParseError("breakpoints must be at least 2 and strictly increasing", path, no)
        axes.append(bp)
    return Grid(tuple(axes))


def save_grid(path, grid: Grid):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{grid.dim}\n")
        for bp in grid.breakpoints:
            fh.write(" ".join(_fmt(x) for x in bp) + "\n")


def _load_grid_dataset(path) -> Dataset:
    grid = load_grid(path)
    return Dataset("tensor", np.zeros(grid.n_cells), grid, fmt="grid", grid_path=str(path))


def load_pcr(path) -> Dataset:
    lines = list(_text_lines(path))
    if not lines:
        raise ParseError("empty PCR file", path)
    no, head = lines[0]
    key, _, ref = head.partition(",")
    if key.strip() != "grid" or not ref.strip():
        raise ParseError("first line must be 'grid,<path>'", path, no)
    grid_path = Path(path).parent / ref.strip()
    grid = load_grid(grid_path)
    values = []
    for no, line in lines[1:]:
        values.extend(_floats([t for t in line.split(",") if t.strip()], path, no))
    if len(values) != grid.n_cells:
        raise ParseError(f"expected {grid.n_cells} cell values, found {len(values)}", path,
                         lines[-1][0])
    return Dataset("tensor", values, grid, fmt="pcr", grid_path=str(grid_path))


def save_pcr(path, values, grid: Grid, grid_path=None):
    """Write cell values; the grid goes to ``grid_path`` (default: next to ``path``)."""
    path = Path(path)
    grid_path = Path(grid_path) if grid_path else path.with_suffix(".grid")
    save_grid(grid_path, grid)
    rel = os.path.relpath(grid_path, path.parent)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"grid,{rel}\n")
        for v in np.asarray(values, dtype=float).reshape(-1):
            fh.write(_fmt(v) + "\n")
    return grid_path


def load_graph(path) -> Dataset:
    lines = list(_text_lines(path))
    if not lines:
        raise ParseError("empty graph file", path)
    no, head = lines[0]
    nm = _ints(head.split(), path, no)
    if len(nm) != 2 or nm[0] < 1 or nm[1] < 0:
        raise ParseError("header must be 'n_vertices n_edges'", path, no)
    n, m = nm
    if len(lines) != 1 + n + m:
        raise ParseError(f"expected {n} vertex and {m} edge lines, found {len(lines) - 1} lines",
                         path, lines[-1][0])
    w = np.empty(n)
    f = np.zeros(n)
    for i, (no, line) in enumerate(lines[1:1 + n]):
        nums = _floats(line.split(), path, no)
        if len(nums) not in (1, 2):
            raise ParseError("vertex line must be 'weight' or 'weight value'", path, no)
        w[i] = nums[0]
        if len(nums) == 2:
            f[i] = nums[1]
    tails, heads, W = [], [], []
    for no, line in lines[1 + n:]:
        parts = line.split()
        if len(parts) != 3:
            raise ParseError("edge line must be 'i j W'", path, no)
        t, h = _ints(parts[:2], path, no)
        if not (0 <= t < n and 0 <= h < n):
            raise ParseError("edge endpoint out of range", path, no)
        tails.append(t)
        heads.append(h)
        W.append(_floats(parts[2:], path, no)[0])
    try:
        g = WeightedGraph(tails, heads, w, W)
    except AnisoTVError as exc:
        raise ParseError(str(exc), path) from exc
    return Dataset("graph", f, graph=g, fmt="graph")


def save_graph(path, g: WeightedGraph, values=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{g.n_vertices} {g.n_edges}\n")
        for i in range(g.n_vertices):
            tail = "" if values is None else " " + _fmt(values[i])
            fh.write(_fmt(g.vertex_weights[i]) + tail + "\n")
        for t, h, W in zip(g.tails, g.heads, g.edge_weights):
            fh.write(f"{t} {h} {_fmt(W)}\n")


def load_polytope(path) -> Dataset:
    rows = []
    for no, line in _text_lines(path):
        row = _floats([t for t in line.split(",")], path, no)
        if rows and len(row) != len(rows[0]):
            raise ParseError("vertices have different dimensions", path, no)
        rows.append(row)
    if not rows:
        raise ParseError("no vertices", path)
    return Dataset("polytope", np.array(rows), fmt="polytope")


def save_polytope(path, vertices):
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.atleast_2d(vertices):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def save_dataset(path, ds: Dataset, values, quantize: bool = False) -> list:
    """Write ``values`` in the format of ``ds``; returns the files written.

    PGM inputs are written as CSV unless ``quantize`` is set, so real-valued
    output is never rounded silently.
    """
    path = Path(path)
    if ds.fmt == "pgm":
        if quantize:
            save_pgm(path, values, ds.shape, ds.maxval or 255)
        else:
            save_csv(path, values, ds.shape)
        return [path]
    if ds.fmt == "csv":
        save_csv(path, values, ds.shape)
    elif ds.fmt == "tensor":
        save_tensor(path, values, ds.grid)
    elif ds.fmt in ("pcr", "grid"):
        grid_path = path.with_suffix(".grid")
        save_pcr(path, values, ds.grid, grid_path)
        return [path, grid_path]
    elif ds.fmt == "graph":
        save_graph(path, ds.graph, values)
    else:
        raise AnisoTVError(f"cannot write values for a {ds.fmt} dataset")
    return [path]


def output_suffix(ds: Dataset, quantize: bool = False) -> str:
    if ds.fmt == "pgm":
        return ".pgm" if quantize else ".csv"
    return {"csv": ".csv", "tensor": ".t", "pcr": ".pcr", "grid": ".pcr", "graph": ".graph"}[ds.fmt]


@dataclass
class RunConfig:
    alpha: float = 0.1
    tol: float = 1e-9
    max_iter: int = 200_000
    seed: int = 0
    n_samples: int = 100
    n_points: int = 20
    audit_tol: float = 1e-7
    probes: list | None = None
    out: str = "."
    quantize: bool = False
    normalize: bool = False
    format: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1 or self.n_samples < 1 or self.n_points < 1:
            raise ValueError("max_iter, n_samples and n_points must be positive")
        return self

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        kinds = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in kinds or key == "extra":
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)

    def merged(self, overrides: dict) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}
        for key, value in overrides.items():
            if value is not None:
                data[key] = _coerce(key, value)
        return RunConfig(**data)


def _coerce(key, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key in ("alpha", "tol", "audit_tol"):
        return float(raw)
    if key in ("max_iter", "seed", "n_samples", "n_points"):
        return int(raw)
    if key in ("quantize", "normalize"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key} expects a boolean, got {raw!r}")
    if key == "probes":
        return [p.strip() for p in raw.split(",") if p.strip()]
    return raw


def load_config(path) -> RunConfig:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for no, line in _text_lines(path):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError("expected key = value", path, no)
        values[key.strip()] = value.strip()
    try:
        return RunConfig.from_mapping(values)
    except ValueError as exc:
        raise ParseError(str(exc), path) from exc
