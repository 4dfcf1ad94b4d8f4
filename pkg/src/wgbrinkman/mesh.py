"""Polygonal meshes of the unit square.

Cells are stored as counter-clockwise vertex loops; the edge topology is
always derived from them, never stored independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AREA_TOL = 1e-12

# Interior points of the S/Z split of the reference square.  The split path
# runs from the bottom midpoint through these two points to the top midpoint.
_ZIG = (0.7, 0.35)
_ZAG = (0.3, 0.65)


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Immutable polygonal mesh.

    ``edges`` is sorted lexicographically on (low vertex, high vertex).
    ``edge_cells[e]`` holds the first and second incident cell (-1 if the
    edge is on the boundary).  ``cell_edges[c][j]`` is the global index of
    the local edge from ``cells[c][j]`` to ``cells[c][j+1]`` and
    ``cell_edge_signs[c][j]`` is +1 when that traversal runs low to high.
    """

    vertices: np.ndarray
    cells: tuple[tuple[int, ...], ...]
    level: int = 1
    edges: np.ndarray = field(init=False, repr=False)
    edge_cells: np.ndarray = field(init=False, repr=False)
    cell_edges: tuple[np.ndarray, ...] = field(init=False, repr=False)
    cell_edge_signs: tuple[np.ndarray, ...] = field(init=False, repr=False)
    boundary_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        cells = tuple(tuple(int(v) for v in loop) for loop in self.cells)
        object.__setattr__(self, "cells", cells)
        edges, edge_cells, cell_edges, signs = derive_edges(cells)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_cells", edge_cells)
        object.__setattr__(self, "cell_edges", cell_edges)
        object.__setattr__(self, "cell_edge_signs", signs)
        object.__setattr__(self, "boundary_edges", np.flatnonzero(edge_cells[:, 1] < 0))

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def is_boundary_edge(self) -> np.ndarray:
        return self.edge_cells[:, 1] < 0

    def cell_vertices(self, c: int) -> np.ndarray:
        return self.vertices[list(self.cells[c])]

    def cell_area(self, c: int) -> float:
        return polygon_area(self.cell_vertices(c))

    def cell_diameter(self, c: int) -> float:
        return polygon_diameter(self.cell_vertices(c))

    def edge_length(self, e: int) -> float:
        a, b = self.vertices[self.edges[e]]
        return float(np.hypot(*(b - a)))


def derive_edges(cells):
    """Build the edge list and incidence from vertex loops.

    Raises ``ValueError`` if an edge is used by more than two cells, since
    no consistent incidence can be recorded for it.
    """
    incid: dict[tuple[int, int], list[int]] = {}
    for c, loop in enumerate(cells):
        n = len(loop)
        for j in range(n):
            a, b = loop[j], loop[(j + 1) % n]
            incid.setdefault((min(a, b), max(a, b)), []).append(c)
    keys = sorted(incid)
    index = {key: i for i, key in enumerate(keys)}
    edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
    edge_cells = np.full((len(keys), 2), -1, dtype=np.int64)
    for i, key in enumerate(keys):
        owners = incid[key]
        if len(owners) > 2:
            raise ValueError(f"edge {key} shared by {len(owners)} cells")
        edge_cells[i, : len(owners)] = owners
    cell_edges = []
    signs = []
    for loop in cells:
        n = len(loop)
        ce = np.empty(n, dtype=np.int64)
        sg = np.empty(n, dtype=np.int64)
        for j in range(n):
            a, b = loop[j], loop[(j + 1) % n]
            ce[j] = index[(min(a, b), max(a, b))]
            sg[j] = 1 if a < b else -1
        ce.setflags(write=False)
        sg.setflags(write=False)
        cell_edges.append(ce)
        signs.append(sg)
    edges.setflags(write=False)
    edge_cells.setflags(write=False)
    return edges, edge_cells, tuple(cell_edges), tuple(signs)


def polygon_area(xy: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise loops."""
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_diameter(xy: np.ndarray) -> float:
    d = xy[:, None, :] - xy[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def _grid_vertices(n: int) -> np.ndarray:
    """Return the (n+1)^2 grid nodes, row by row from the bottom."""
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def build_uniform_triangle_mesh(level: int) -> Mesh2D:
    """Split a 2^level grid of squares by their lower-left/upper-right diagonals."""
    if level < 1:
        raise ValueError("level must be >= 1")
    n = 2**level
    verts = _grid_vertices(n)

    def node(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    return Mesh2D(verts, cells, level=level)


def build_nonconvex_polygon_mesh(level: int) -> Mesh2D:
    """Split each square of a 2^level grid into two interlocking hexagons.

    The split path joins the bottom and top midpoints of the square through
    two interior points that zig right and then left, so the left hexagon is
    reflex at the upper interior point and the right one at the lower.
    Midpoints are shared with the squares above and below, keeping the mesh
    conforming.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    n = 2**level
    hsq = 1.0 / n
    pts = [tuple(p) for p in _grid_vertices(n)]

    def node(i, j):
        return j * (n + 1) + i

    # horizontal-edge midpoints, one per (i, j) for j in 0..n
    mid = {}
    for j in range(n + 1):
        for i in range(n):
            mid[i, j] = len(pts)
            pts.append(((i + 0.5) * hsq, j * hsq))
    cells = []
    for j in range(n):
        for i in range(n):
            x0, y0 = i * hsq, j * hsq
            p = len(pts)
            pts.append((x0 + _ZIG[0] * hsq, y0 + _ZIG[1] * hsq))
            q = len(pts)
            pts.append((x0 + _ZAG[0] * hsq, y0 + _ZAG[1] * hsq))
            mb, mt = mid[i, j], mid[i, j + 1]
            cells.append((node(i, j), mb, p, q, mt, node(i, j + 1)))
            cells.append((mb, node(i + 1, j), node(i + 1, j + 1), mt, q, p))
    return Mesh2D(np.array(pts), cells, level=level)


FAMILIES = {
    "tri": build_uniform_triangle_mesh,
    "poly": build_nonconvex_polygon_mesh,
}

FAMILY_DESCRIPTIONS = {
    "tri": "uniform-triangle: 2^i x 2^i squares cut by the SW-NE diagonal",
    "poly": "nonconvex-polygon: 2^i x 2^i squares cut into two interlocking hexagons",
}


def build_mesh(family: str, level: int) -> Mesh2D:
    try:
        builder = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown mesh family {family!r}") from None
    return builder(level)


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def validate_mesh(m: Mesh2D) -> list[str]:
    """Return human-readable invariant violations; empty means valid."""
    out: list[str] = []
    total = 0.0
    for c, loop in enumerate(m.cells):
        xy = m.vertices[list(loop)]
        n = len(loop)
        if n < 3:
            out.append(f"too few vertices, cell {c}")
            continue
        for j in range(n):
            if loop[j] == loop[(j + 1) % n] or np.allclose(xy[j], xy[(j + 1) % n], atol=AREA_TOL, rtol=0):
                out.append(f"degenerate edge, cell {c} local edge {j}")
        if len(set(loop)) != n:
            out.append(f"repeated vertex, cell {c}")
        area = polygon_area(xy)
        total += area
        if area <= AREA_TOL:
            out.append(f"negative area, cell {c}")
        for a in range(n):
            for b in range(a + 2, n):
                if a == 0 and b == n - 1:
                    continue
                if _segments_cross(xy[a], xy[(a + 1) % n], xy[b], xy[(b + 1) % n]):
                    out.append(f"self-intersection, cell {c} edges {a},{b}")
    if abs(total - 1.0) > AREA_TOL:
        out.append(f"cells do not tile the unit square: total area {total!r}")
    for e in range(m.n_edges):
        c0, c1 = m.edge_cells[e]
        if c1 < 0:
            a, b = m.vertices[m.edges[e]]
            on_side = any(
                abs(a[ax] - v) <= AREA_TOL and abs(b[ax] - v) <= AREA_TOL
                for ax in (0, 1)
                for v in (0.0, 1.0)
            )
            if not on_side:
                out.append(f"boundary edge {e} not on the square boundary")
            continue
        s0 = m.cell_edge_signs[c0][list(m.cell_edges[c0]).index(e)]
        s1 = m.cell_edge_signs[c1][list(m.cell_edges[c1]).index(e)]
        if s0 == s1:
            out.append(f"inconsistent orientation, edge {e} (cells {c0},{c1})")
    return out


def mesh_metrics(m: Mesh2D) -> tuple[float, float, int, int]:
    """Return (h, min edge length, cell count, edge count)."""
    h = max(m.cell_diameter(c) for c in range(m.n_cells))
    seg = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
    min_edge = float(np.hypot(seg[:, 0], seg[:, 1]).min())
    return h, min_edge, m.n_cells, m.n_edges


def write_mesh(m: Mesh2D, path) -> None:
    """Write the plain-text debugging format (``wgmesh 2d`` header)."""
    lines = ["wgmesh 2d", str(len(m.vertices))]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in m.vertices]
    lines.append(str(m.n_cells))
    lines += [" ".join(str(v) for v in loop) for loop in m.cells]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, level: int = 1) -> Mesh2D:
    tokens = Path(path).read_text().split("\n")
    if tokens[0].strip() != "wgmesh 2d":
        raise ValueError("not a wgmesh 2d file")
    nv = int(tokens[1])
    verts = np.array([[float(t) for t in tokens[2 + i].split()] for i in range(nv)])
    nc = int(tokens[2 + nv])
    cells = [tuple(int(t) for t in tokens[3 + nv + i].split()) for i in range(nc)]
    return Mesh2D(verts, cells, level=level)


def unit_square_mesh() -> Mesh2D:
    """The unit square as a single cell."""
    return Mesh2D(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), [(0, 1, 2, 3)], level=0)


__all__ = [
    "Mesh2D",
    "build_uniform_triangle_mesh",
    "build_nonconvex_polygon_mesh",
    "build_mesh",
    "validate_mesh",
    "mesh_metrics",
    "write_mesh",
    "read_mesh",
    "unit_square_mesh",
    "polygon_area",
    "polygon_diameter",
    "FAMILIES",
    "FAMILY_DESCRIPTIONS",
]

