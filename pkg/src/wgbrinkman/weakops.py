"""Element-local weak calculus: projections, weak gradient/divergence, stabilizer.

Local velocity dofs on a cell with ``n`` edges are laid out as

    [v0_x (dim P_k), v0_y (dim P_k), e_0 x, e_0 y, ..., e_{n-1} x, e_{n-1} y]

with ``k + 1`` coefficients per edge component.  Edge coefficients refer to
the global edge basis, which is parametrized from the lower to the higher
vertex index, so neighbouring cells share them without sign changes.

Tensor-valued quantities in [P_r]^{2x2} are stored as four scalar blocks in
(xx, xy, yx, yy) order, block (i, j) holding d v_i / d x_j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import _kernels as K
from .mesh import Mesh2D
from .polybasis import (
    CellBasis,
    EdgeBasis,
    IllConditionedError,
    QuadRule,
    area_centroid,
    dim_p,
    edge_quadrature,
    polygon_quadrature,
)
from .mesh import polygon_diameter


def default_gradient_degree(k: int, stabilized: bool = True) -> int:
    """r = k - 1 with the stabilizer, r = k + 3 without it."""
    return k - 1 if stabilized else k + 3


def default_exactness(k: int, r: int) -> int:
    return max(2 * k + 2, 2 * r + 2)


@dataclass(frozen=True)
class LocalDofLayout:
    k: int
    n_edges: int

    @property
    def nk(self) -> int:
        return dim_p(self.k)

    @property
    def ne(self) -> int:
        return self.k + 1

    @property
    def n_scalar(self) -> int:
        return self.nk + self.n_edges * self.ne

    @property
    def ndof(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_pressure(self) -> int:
        return dim_p(self.k - 1)

    def interior(self, comp: int) -> np.ndarray:
        return comp * self.nk + np.arange(self.nk)

    def edge(self, local_edge: int, comp: int) -> np.ndarray:
        start = 2 * self.nk + local_edge * 2 * self.ne + comp * self.ne
        return start + np.arange(self.ne)

    def component(self, comp: int) -> np.ndarray:
        """Indices of one velocity component, in scalar-layout order."""
        parts = [self.interior(comp)] + [self.edge(l, comp) for l in range(self.n_edges)]
        return np.concatenate(parts)

    def constant_pair(self, c) -> np.ndarray:
        """Dof vector of v0 = c, vb = c (first basis functions are 1)."""
        v = np.zeros(self.ndof)
        for i in range(2):
            v[self.interior(i)[0]] = c[i]
            for l in range(self.n_edges):
                v[self.edge(l, i)[0]] = c[i]
        return v


@dataclass(frozen=True)
class CellGeometry:
    """Cell shape data needed by the element operators."""

    vertices: np.ndarray
    centroid: np.ndarray
    diameter: float
    area: float
    # per local edge: endpoints in traversal order and the global-orientation endpoints
    edge_start: np.ndarray
    edge_end: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    edge_signs: np.ndarray

    @classmethod
    def from_vertices(cls, xy: np.ndarray, signs) -> "CellGeometry":
        xy = np.asarray(xy, dtype=float)
        start = xy
        end = np.roll(xy, -1, axis=0)
        t = end - start
        lengths = np.hypot(t[:, 0], t[:, 1])
        normals = np.column_stack([t[:, 1], -t[:, 0]]) / lengths[:, None]
        x, y = xy[:, 0], xy[:, 1]
        area = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
        return cls(
            xy,
            area_centroid(xy),
            polygon_diameter(xy),
            area,
            start,
            end,
            normals,
            lengths,
            np.asarray(signs, dtype=np.int64),
        )

    @classmethod
    def of_cell(cls, m: Mesh2D, c: int) -> "CellGeometry":
        return cls.from_vertices(m.cell_vertices(c), m.cell_edge_signs[c])

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    def cell_basis(self, degree: int) -> CellBasis:
        return CellBasis(degree, self.centroid, self.diameter)

    def edge_basis(self, l: int, degree: int) -> EdgeBasis:
        """Global-orientation basis on local edge ``l``."""
        a, b = self.edge_start[l], self.edge_end[l]
        if self.edge_signs[l] < 0:
            a, b = b, a
        return EdgeBasis(degree, a, b)

    def edge_rule(self, l: int, exactness: int) -> QuadRule:
        return edge_quadrature(exactness, self.edge_start[l], self.edge_end[l])

    def quadrature(self, exactness: int) -> QuadRule:
        return polygon_quadrature(self.vertices, exactness)


def _spd_solve(M: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        return cho_solve(cho_factor(M), rhs)
    except LinAlgError as exc:
        raise IllConditionedError(f"{what} mass matrix is singular") from exc


def scalar_weak_derivatives(geom: CellGeometry, k: int, r: int, exactness: int):
    """Scalar weak partial derivatives into P_r.

    Returns ``(W, Mr)`` where ``W[j]`` maps scalar local dofs
    ``[v0 (dim P_k), vb on each edge (k+1)]`` to the P_r coefficients of the
    weak d/dx_j, i.e. ``Mr W[j] v = -(v0, d_j phi) + <vb, phi n_j>``.
    """
    quad = geom.quadrature(exactness)
    br = geom.cell_basis(r)
    bk = geom.cell_basis(k)
    vr = br.values(quad.points)
    Mr = K.weighted_gram(vr, quad.weights, vr)
    Mr = 0.5 * (Mr + Mr.T)
    gr = br.grads(quad.points)
    vk = bk.values(quad.points)
    nk, ne = dim_p(k), k + 1
    rhs = np.zeros((2, dim_p(r), nk + geom.n_edges * ne))
    for j in range(2):
        rhs[j, :, :nk] = -K.weighted_gram(gr[j], quad.weights, vk)
    for l in range(geom.n_edges):
        erule = geom.edge_rule(l, exactness)
        E = K.weighted_gram(br.values(erule.points), erule.weights, geom.edge_basis(l, k).values(erule.points))
        cols = slice(nk + l * ne, nk + (l + 1) * ne)
        for j in range(2):
            rhs[j, :, cols] = geom.normals[l, j] * E
    W = _spd_solve(Mr, rhs.transpose(1, 0, 2).reshape(dim_p(r), -1), "weak-derivative")
    W = W.reshape(dim_p(r), 2, -1).transpose(1, 0, 2)
    return W, Mr


def scalar_stabilizer(geom: CellGeometry, k: int, exactness: int) -> np.ndarray:
    """h_T^{-1} sum_e <v0 - vb, w0 - wb>_e on scalar local dofs."""
    bk = geom.cell_basis(k)
    nk, ne = dim_p(k), k + 1
    n = nk + geom.n_edges * ne
    S = np.zeros((n, n))
    for l in range(geom.n_edges):
        erule = geom.edge_rule(l, exactness)
        J = np.zeros((n, len(erule.weights)))
        J[:nk] = bk.values(erule.points)
        J[nk + l * ne : nk + (l + 1) * ne] = -geom.edge_basis(l, k).values(erule.points)
        S += K.weighted_gram(J, erule.weights, J)
    S /= geom.diameter
    return 0.5 * (S + S.T)


def _vectorize(layout: LocalDofLayout, scalar_rows: np.ndarray, comp: int) -> np.ndarray:
    """Embed a scalar-layout operator acting on component ``comp``."""
    out = np.zeros((scalar_rows.shape[0], layout.ndof))
    out[:, layout.component(comp)] = scalar_rows
    return out


@dataclass(frozen=True)
class ElementOps:
    """Local matrices of one cell (see module docstring for the dof layout)."""

    layout: LocalDofLayout
    r: int
    G: np.ndarray
    D: np.ndarray
    S: np.ndarray
    M0: np.ndarray
    Mg: np.ndarray
    Mp: np.ndarray
    diameter: float
    S_scalar: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)

    @property
    def Mg_tensor(self) -> np.ndarray:
        """Mass of [P_r]^{2x2} in (xx, xy, yx, yy) block order."""
        return np.kron(np.eye(4), self.Mg)

    def gradient_form(self) -> np.ndarray:
        """(grad_w u, grad_w v)_T as a local matrix."""
        n = self.layout.ndof
        A = np.zeros((n, n))
        Ascal = sum(w.T @ self.Mg @ w for w in self.W)
        Ascal = 0.5 * (Ascal + Ascal.T)
        for i in range(2):
            idx = self.layout.component(i)
            A[np.ix_(idx, idx)] = Ascal
        return A

    def mass_form(self, kappa_inv) -> np.ndarray:
        """(kappa^{-1} u0, v0)_T on the interior blocks."""
        n = self.layout.ndof
        nk = self.layout.nk
        A = np.zeros((n, n))
        A[: 2 * nk, : 2 * nk] = np.kron(np.asarray(kappa_inv, dtype=float), self.M0)
        return A

    def stabilizer_form(self) -> np.ndarray:
        return self.S


def element_ops(geom: CellGeometry, k: int, r: int | None = None, exactness: int | None = None) -> ElementOps:
    """Build G, D, S and the masses for one cell.

    The weak divergence always uses degree k - 1; ``r`` only affects the
    weak gradient.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if r is None:
        r = k - 1
    if r < 0:
        raise ValueError("gradient degree r must be >= 0")
    if exactness is None:
        exactness = default_exactness(k, r)
    layout = LocalDofLayout(k, geom.n_edges)
    W, Mr = scalar_weak_derivatives(geom, k, r, exactness)
    if r == k - 1:
        Wp, Mp = W, Mr
    else:
        Wp, Mp = scalar_weak_derivatives(geom, k, k - 1, exactness)

    G = np.vstack([_vectorize(layout, W[j], i) for i in range(2) for j in range(2)])
    D = _vectorize(layout, Wp[0], 0) + _vectorize(layout, Wp[1], 1)
    S_scalar = scalar_stabilizer(geom, k, exactness)
    S = np.zeros((layout.ndof, layout.ndof))
    for i in range(2):
        idx = layout.component(i)
        S[np.ix_(idx, idx)] = S_scalar

    quad = geom.quadrature(exactness)
    vk = geom.cell_basis(k).values(quad.points)
    M0 = K.weighted_gram(vk, quad.weights, vk)
    M0 = 0.5 * (M0 + M0.T)
    return ElementOps(layout, r, G, D, S, M0, Mr, Mp, geom.diameter, S_scalar, W)


def stabilizer_matrix(geom: CellGeometry, k: int, exactness: int | None = None) -> np.ndarray:
    return element_ops(geom, k, exactness=exactness).S


def weak_gradient_matrix(geom: CellGeometry, k: int, r: int | None = None, exactness: int | None = None) -> np.ndarray:
    return element_ops(geom, k, r, exactness).G


def weak_divergence_matrix(geom: CellGeometry, k: int, exactness: int | None = None) -> np.ndarray:
    return element_ops(geom, k, k - 1, exactness).D


# ------------------------------------------------------------- projections


def _load(basis, quad: QuadRule, values: np.ndarray) -> np.ndarray:
    """sum_q w_q basis_a(x_q) values[..., q]."""
    B = basis.values(quad.points)
    return np.atleast_2d(values) @ (B * quad.weights).T


def project_cell(g, geom: CellGeometry, degree: int, exactness: int) -> np.ndarray:
    """L2 projection of ``g`` onto P_degree(T).

    ``g`` maps an (n, 2) point array to an (n,) array (scalar) or an (m, n)
    array (m components); the result has shape (dim P,) or (m, dim P).
    """
    quad = geom.quadrature(exactness)
    basis = geom.cell_basis(degree)
    B = basis.values(quad.points)
    M = K.weighted_gram(B, quad.weights, B)
    vals = np.asarray(g(quad.points), dtype=float)
    rhs = _load(basis, quad, vals)
    c = _spd_solve(0.5 * (M + M.T), rhs.T, "cell").T
    return c[0] if vals.ndim == 1 else c


def project_interior(f, geom: CellGeometry, k: int, exactness: int) -> np.ndarray:
    """Q0: coefficients of both velocity components, concatenated x then y."""
    return project_cell(f, geom, k, exactness).ravel()


def project_scalar(g, geom: CellGeometry, degree: int, exactness: int) -> np.ndarray:
    return project_cell(g, geom, degree, exactness)


def project_edge(f, basis: EdgeBasis, exactness: int) -> np.ndarray:
    """Qb onto P_k(e): shape (m, k+1) for an m-component ``f``."""
    rule = edge_quadrature(exactness, basis.start, basis.end)
    B = basis.values(rule.points)
    M = K.weighted_gram(B, rule.weights, B)
    vals = np.atleast_2d(np.asarray(f(rule.points), dtype=float))
    rhs = vals @ (B * rule.weights).T
    return _spd_solve(0.5 * (M + M.T), rhs.T, "edge").T


def local_projection(f, geom: CellGeometry, k: int, exactness: int) -> np.ndarray:
    """Q_h f restricted to one cell, in the local dof layout."""
    layout = LocalDofLayout(k, geom.n_edges)
    v = np.zeros(layout.ndof)
    c0 = project_cell(f, geom, k, exactness)
    for i in range(2):
        v[layout.interior(i)] = c0[i]
    for l in range(geom.n_edges):
        cb = project_edge(f, geom.edge_basis(l, k), exactness)
        for i in range(2):
            v[layout.edge(l, i)] = cb[i]
    return v


def commutativity_defect(u, grad_u, div_u, geom: CellGeometry, k: int, exactness: int, relative: bool = False) -> float:
    """max |grad_w Q_h u - Q(grad u)| and |div_w Q_h u - Q(div u)| in coefficients.

    ``grad_u`` returns an array of shape (2, 2, n) with ``[i, j] = d u_i/d x_j``.
    With ``relative`` the defect is divided by max(1, largest coefficient of
    Q(grad u)); gradient coefficients grow like 1/h_T on small cells.
    """
    ops = element_ops(geom, k, k - 1, exactness)
    v = local_projection(u, geom, k, exactness)
    lhs_g = (ops.G @ v).reshape(4, -1)
    rhs_g = project_cell(lambda p: np.asarray(grad_u(p)).reshape(4, -1), geom, k - 1, exactness)
    lhs_d = ops.D @ v
    rhs_d = project_cell(div_u, geom, k - 1, exactness)
    d = float(max(np.abs(lhs_g - rhs_g).max(), np.abs(lhs_d - rhs_d).max()))
    return d / max(1.0, float(np.abs(rhs_g).max())) if relative else d


def commutativity_check(
    u, grad_u, div_u, mesh: Mesh2D, k: int, exactness: int | None = None, cells=None, relative: bool = False
) -> float:
    """Largest coefficient defect of the two commuting identities over ``cells``."""
    if exactness is None:
        exactness = default_exactness(k, k - 1) + 6
    cells = range(mesh.n_cells) if cells is None else cells
    return max(
        commutativity_defect(u, grad_u, div_u, CellGeometry.of_cell(mesh, c), k, exactness, relative) for c in cells
    )


class ElementOpsCache:
    """Share ElementOps between translated copies of the same cell.

    All local matrices are invariant under translation (bases are centred
    at the cell centroid); the key includes the edge-orientation pattern
    because edge bases follow global vertex numbering.
    """

    def __init__(self, mesh: Mesh2D, k: int, r: int, exactness: int | None = None):
        self.mesh = mesh
        self.k = k
        self.r = r
        self.exactness = default_exactness(k, r) if exactness is None else exactness
        self._ops: dict = {}
        self.hits = 0

    def key(self, c: int):
        xy = self.mesh.cell_vertices(c)
        rel = np.round((xy - xy[0]) * 2.0**40).astype(np.int64)
        return rel.tobytes(), self.mesh.cell_edge_signs[c].tobytes()

    def __call__(self, c: int) -> ElementOps:
        key = self.key(c)
        ops = self._ops.get(key)
        if ops is None:
            ops = element_ops(CellGeometry.of_cell(self.mesh, c), self.k, self.r, self.exactness)
            self._ops[key] = ops
        else:
            self.hits += 1
        return ops
