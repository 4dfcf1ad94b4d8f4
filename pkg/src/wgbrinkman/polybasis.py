"""Scaled monomial bases and quadrature on polygons and segments."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from . import _kernels as K
from .mesh import Mesh2D, polygon_area, polygon_diameter


class IllConditionedError(ArithmeticError):
    """A mass matrix is numerically singular."""


class TriangulationError(ValueError):
    """A cell admits no interior triangulation (it is not a simple polygon)."""


def dim_p(degree: int) -> int:
    """Dimension of P_degree in two variables."""
    return (degree + 1) * (degree + 2) // 2 if degree >= 0 else 0


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class CellBasis:
    """Scaled monomials ((x - x_T)/h_T)^alpha, |alpha| <= degree, graded-lex."""

    degree: int
    centroid: np.ndarray
    scale: float
    cell: int = -1

    @property
    def size(self) -> int:
        return dim_p(self.degree)

    def values(self, pts) -> np.ndarray:
        return K.monomials(pts, self.centroid, self.scale, self.degree)

    def grads(self, pts) -> np.ndarray:
        return K.monomial_grads(pts, self.centroid, self.scale, self.degree)


@dataclass(frozen=True)
class EdgeBasis:
    """1D scaled monomials in arclength about the edge midpoint.

    The parameter runs from -1 at ``start`` to +1 at ``end``; edges in a
    mesh are always parametrized from their lower to higher vertex index,
    so both neighbouring cells see the same functions.
    """

    degree: int
    start: np.ndarray
    end: np.ndarray
    edge: int = -1

    @property
    def size(self) -> int:
        return self.degree + 1

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)

    @property
    def half_length(self) -> float:
        return 0.5 * float(np.hypot(*(self.end - self.start)))

    def param(self, pts) -> np.ndarray:
        t = self.end - self.start
        return (np.asarray(pts) - self.midpoint) @ t / (0.5 * float(t @ t))

    def values(self, pts) -> np.ndarray:
        return K.powers(self.param(pts), self.degree)


# ---------------------------------------------------------------- quadrature


@lru_cache(maxsize=None)
def _gauss_legendre01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def reference_triangle_rule(exactness: int):
    """Conical-product rule on the triangle (0,0), (1,0), (0,1).

    Gauss-Jacobi (weight 1-s) in the collapsed direction times Gauss-Legendre
    in the other; exact for total degree <= ``exactness``.
    """
    n = max(1, math.ceil((exactness + 1) / 2))
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s, ws = 0.5 * (xj + 1.0), wj / 4.0
    t, wt = _gauss_legendre01(n)
    S, T = np.meshgrid(s, t, indexing="ij")
    pts = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
    w = np.outer(ws, wt).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def edge_quadrature(exactness: int, start=(0.0,), end=(1.0,)) -> QuadRule:
    """Gauss-Legendre with ceil((exactness+1)/2) points mapped onto a segment.

    ``start``/``end`` may be scalars-as-1-tuples (a 1D interval) or 2D points;
    the weights carry the segment length.
    """
    n = max(1, math.ceil((exactness + 1) / 2))
    t, w = _gauss_legendre01(n)
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    length = float(np.linalg.norm(b - a))
    if pts.shape[1] == 1:
        pts = pts[:, 0]
    return QuadRule(pts, w * length, exactness)


def _tri_area(a, b, c) -> float:
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _point_in_triangle(p, a, b, c) -> bool:
    return _tri_area(a, b, p) >= 0 and _tri_area(b, c, p) >= 0 and _tri_area(c, a, p) >= 0


def ear_clip(xy: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple counter-clockwise polygon by ear clipping."""
    idx = list(range(len(xy)))
    tris = []
    guard = 0
    while len(idx) > 3:
        n = len(idx)
        for j in range(n):
            i0, i1, i2 = idx[(j - 1) % n], idx[j], idx[(j + 1) % n]
            a, b, c = xy[i0], xy[i1], xy[i2]
            if _tri_area(a, b, c) <= 1e-14:
                continue
            if any(_point_in_triangle(xy[m], a, b, c) for m in idx if m not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            idx.pop(j)
            break
        else:
            raise TriangulationError("no ear found; polygon is not simple")
        guard += 1
        if guard > 10 * len(xy):  # pragma: no cover
            raise TriangulationError("ear clipping did not terminate")
    a, b, c = (xy[i] for i in idx)
    if _tri_area(a, b, c) <= 0:
        raise TriangulationError("degenerate final triangle")
    tris.append(tuple(idx))
    return tris


def area_centroid(xy: np.ndarray) -> np.ndarray:
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = 0.5 * cr.sum()
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * a)


def sub_triangles(xy: np.ndarray) -> np.ndarray:
    """Triangles (as a (nt, 3, 2) array) covering the polygon exactly once.

    Fan from the area centroid when it sees every edge, ear clipping otherwise.
    """
    if polygon_area(xy) <= 0:
        raise TriangulationError("polygon is not counter-clockwise")
    n = len(xy)
    c = area_centroid(xy)
    fan = [(c, xy[j], xy[(j + 1) % n]) for j in range(n)]
    if all(_tri_area(*t) > 1e-14 for t in fan):
        return np.array(fan)
    return np.array([(xy[a], xy[b], xy[c]) for a, b, c in ear_clip(xy)])


def triangles_quadrature(tris: np.ndarray, exactness: int) -> QuadRule:
    ref_pts, ref_w = reference_triangle_rule(exactness)
    a = tris[:, 0, :]
    e1 = tris[:, 1, :] - a
    e2 = tris[:, 2, :] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = (
        a[:, None, :]
        + ref_pts[None, :, 0, None] * e1[:, None, :]
        + ref_pts[None, :, 1, None] * e2[:, None, :]
    )
    w = np.abs(det)[:, None] * ref_w[None, :]
    return QuadRule(pts.reshape(-1, 2), w.ravel(), exactness)


def polygon_quadrature(xy: np.ndarray, exactness: int) -> QuadRule:
    return triangles_quadrature(sub_triangles(np.asarray(xy, dtype=float)), exactness)


def cell_quadrature(m: Mesh2D, cell: int, exactness: int) -> QuadRule:
    if exactness < 0:
        raise ValueError("exactness must be >= 0")
    return polygon_quadrature(m.cell_vertices(cell), exactness)


def cell_basis(m: Mesh2D, cell: int, degree: int) -> CellBasis:
    xy = m.cell_vertices(cell)
    return CellBasis(degree, area_centroid(xy), polygon_diameter(xy), cell)


def edge_basis(m: Mesh2D, edge: int, degree: int) -> EdgeBasis:
    a, b = m.vertices[m.edges[edge]]
    return EdgeBasis(degree, a, b, edge)


def mass_matrix(basis, quad: QuadRule, check: bool = True) -> np.ndarray:
    """Gram matrix of ``basis`` under ``quad``; symmetrized to round-off."""
    v = basis.values(quad.points)
    M = K.weighted_gram(v, quad.weights, v)
    M = 0.5 * (M + M.T)
    if check:
        ev = np.linalg.eigvalsh(M)
        if ev[0] < 1e-13 * ev[-1]:
            raise IllConditionedError(f"mass matrix eigenvalue ratio {ev[0] / ev[-1]:.3e}")
    return M
