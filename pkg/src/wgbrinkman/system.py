"""Global numbering, saddle-point assembly and direct solution."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh2D
from .ordering import condensed_ordering
from .polybasis import dim_p
from .weakops import CellGeometry, ElementOpsCache, LocalDofLayout, default_exactness, default_gradient_degree


class AssemblyError(ValueError):
    """Inconsistent discretization parameters."""


class SolverError(RuntimeError):
    """The saddle-point factorization failed (singular system)."""


@dataclass(frozen=True)
class DofMap:
    """Global unknowns: cell interiors, then interior edges, pressures, multiplier.

    Boundary edges carry no unknowns; their velocity is zero.
    """

    mesh: Mesh2D
    k: int
    edge_index: np.ndarray  # global edge -> interior edge number, -1 on the boundary

    @property
    def nk(self) -> int:
        return dim_p(self.k)

    @property
    def ne(self) -> int:
        return self.k + 1

    @property
    def n_pressure_local(self) -> int:
        return dim_p(self.k - 1)

    @property
    def n_interior_edges(self) -> int:
        return int((self.edge_index >= 0).sum())

    @property
    def n_u(self) -> int:
        return self.mesh.n_cells * 2 * self.nk + self.n_interior_edges * 2 * self.ne

    @property
    def n_p(self) -> int:
        return self.mesh.n_cells * self.n_pressure_local

    @property
    def multiplier(self) -> int:
        return self.n_u + self.n_p

    @property
    def size(self) -> int:
        return self.n_u + self.n_p + 1

    def cell_offset(self, c: int) -> int:
        return c * 2 * self.nk

    def edge_offset(self, e: int) -> int:
        i = self.edge_index[e]
        if i < 0:
            return -1
        return self.mesh.n_cells * 2 * self.nk + i * 2 * self.ne

    def pressure_offset(self, c: int) -> int:
        return self.n_u + c * self.n_pressure_local

    def pressure_dofs(self, c: int) -> np.ndarray:
        return self.pressure_offset(c) + np.arange(self.n_pressure_local)

    def velocity_dofs(self, c: int) -> np.ndarray:
        """Global index of each local velocity dof of cell ``c`` (-1: boundary)."""
        edges = self.mesh.cell_edges[c]
        layout = LocalDofLayout(self.k, len(edges))
        out = np.empty(layout.ndof, dtype=np.int64)
        out[: 2 * self.nk] = self.cell_offset(c) + np.arange(2 * self.nk)
        for l, e in enumerate(edges):
            off = self.edge_offset(e)
            idx = layout.edge(l, 0)[0] + np.arange(2 * self.ne)
            out[idx] = off + np.arange(2 * self.ne) if off >= 0 else -1
        return out

    def full_velocity_dofs(self, c: int) -> np.ndarray:
        """Local layout -> index into the V_h vector (all edges, boundary included)."""
        edges = self.mesh.cell_edges[c]
        layout = LocalDofLayout(self.k, len(edges))
        out = np.empty(layout.ndof, dtype=np.int64)
        out[: 2 * self.nk] = self.cell_offset(c) + np.arange(2 * self.nk)
        base = self.mesh.n_cells * 2 * self.nk
        for l, e in enumerate(edges):
            idx = layout.edge(l, 0)[0] + np.arange(2 * self.ne)
            out[idx] = base + e * 2 * self.ne + np.arange(2 * self.ne)
        return out

    @property
    def n_full(self) -> int:
        """Size of the V_h vector including boundary edges."""
        return self.mesh.n_cells * 2 * self.nk + self.mesh.n_edges * 2 * self.ne

    def partition_ok(self) -> bool:
        """True iff all offsets tile 0..size-1 without gaps or overlaps."""
        seen = np.zeros(self.size, dtype=np.int64)
        for c in range(self.mesh.n_cells):
            seen[self.cell_offset(c) + np.arange(2 * self.nk)] += 1
            seen[self.pressure_dofs(c)] += 1
        for e in range(self.mesh.n_edges):
            off = self.edge_offset(e)
            if off >= 0:
                seen[off + np.arange(2 * self.ne)] += 1
        seen[self.multiplier] += 1
        return bool(np.all(seen == 1))


def build_dofmap(mesh: Mesh2D, k: int) -> DofMap:
    if k < 1:
        raise ValueError("k must be >= 1")
    interior = ~mesh.is_boundary_edge
    edge_index = np.full(mesh.n_edges, -1, dtype=np.int64)
    edge_index[interior] = np.arange(int(interior.sum()))
    return DofMap(mesh, k, edge_index)


def _kappa_per_cell(kappa_inv, n_cells: int) -> np.ndarray:
    if kappa_inv is None:
        kappa_inv = np.eye(2)
    kinv = np.asarray(kappa_inv, dtype=float)
    if kinv.ndim == 0:
        kinv = kinv * np.eye(2)
    if kinv.shape == (2, 2):
        kinv = np.broadcast_to(kinv, (n_cells, 2, 2))
    if kinv.shape != (n_cells, 2, 2):
        raise AssemblyError(f"kappa_inv has shape {kinv.shape}")
    for c in range(n_cells):
        if not np.allclose(kinv[c], kinv[c].T, rtol=0, atol=1e-14) or np.linalg.eigvalsh(kinv[c])[0] <= 0:
            raise AssemblyError(f"kappa_inv of cell {c} is not symmetric positive definite")
    return kinv


def resolve_gradient_degree(k: int, stabilized: bool, r: int | None) -> int:
    if r is None:
        return default_gradient_degree(k, stabilized)
    if r < k - 1:
        raise AssemblyError(f"gradient degree r={r} below k-1={k - 1}")
    if not stabilized and r < k + 1:
        raise AssemblyError(f"stabilizer-free mode needs r >= k+1, got r={r}")
    return r


@dataclass(frozen=True)
class LocalBlock:
    """Element matrices shared by all cells of one shape (and one kappa)."""

    A: np.ndarray
    B: np.ndarray  # -Mp D, rows: pressure basis, cols: local velocity dofs
    mean: np.ndarray  # integral of each pressure basis function


@dataclass(eq=False)
class SaddleSystem:
    """K = [[A, B^T, 0], [B, 0, m], [0, m^T, 0]] and right-hand side F.

    Element blocks are stored once per distinct cell shape; the global sparse
    matrix is built on first access of ``K``.
    """

    dofmap: DofMap
    r: int
    stabilized: bool
    kappa_inv: np.ndarray = field(repr=False)
    ops: ElementOpsCache = field(repr=False)
    blocks: list = field(repr=False)
    cell_block: np.ndarray = field(repr=False)
    loads: np.ndarray = field(repr=False)  # (n_cells, 2 * nk) interior loads
    _K: sp.csc_matrix | None = field(default=None, repr=False)

    def block(self, c: int) -> LocalBlock:
        return self.blocks[self.cell_block[c]]

    @property
    def F(self) -> np.ndarray:
        dm = self.dofmap
        F = np.zeros(dm.size)
        F[: dm.mesh.n_cells * 2 * dm.nk] = self.loads.ravel()
        return F

    @property
    def K(self) -> sp.csc_matrix:
        if self._K is None:
            self._K = self._build_K()
        return self._K

    def _build_K(self) -> sp.csc_matrix:
        dm = self.dofmap
        npl = dm.n_pressure_local
        rows, cols, vals = [], [], []
        for c in range(dm.mesh.n_cells):
            blk = self.block(c)
            g = dm.velocity_dofs(c)
            keep = np.flatnonzero(g >= 0)
            gk = g[keep]
            rows.append(np.repeat(gk, len(gk)))
            cols.append(np.tile(gk, len(gk)))
            vals.append(blk.A[np.ix_(keep, keep)].ravel())
            pd = dm.pressure_dofs(c)
            Bk = blk.B[:, keep].ravel()
            rows += [np.repeat(pd, len(gk)), np.tile(gk, npl), pd, np.full(npl, dm.multiplier)]
            cols += [np.tile(gk, npl), np.repeat(pd, len(gk)), np.full(npl, dm.multiplier), pd]
            vals += [Bk, Bk, blk.mean, blk.mean]
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dm.size, dm.size)
        ).tocsc()
        K.sum_duplicates()
        return K

    @property
    def A(self) -> sp.csc_matrix:
        n = self.dofmap.n_u
        return self.K[:n, :n]

    @property
    def B(self) -> sp.csc_matrix:
        n, m = self.dofmap.n_u, self.dofmap.n_p
        return self.K[n : n + m, :n]

    @property
    def mean_vector(self) -> np.ndarray:
        return np.concatenate([self.block(c).mean for c in range(self.dofmap.mesh.n_cells)])

    def symmetry_defect(self) -> float:
        """||K - K^T||_inf / ||K||_inf."""
        K = self.K
        diff = abs(K - K.T).sum(axis=1).max()
        return float(diff / abs(K).sum(axis=1).max())

    def dump(self, path) -> None:
        """Write K and F as ``row col value`` text (F rows use col -1)."""
        coo = self.K.tocoo()
        F = self.F
        with Path(path).open("w") as fh:
            fh.write(f"# n={coo.shape[0]} nnz={coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
            for i in np.flatnonzero(F):
                fh.write(f"{i} -1 {float(F[i])!r}\n")


def assemble(
    mesh: Mesh2D,
    k: int,
    r: int | None = None,
    kappa_inv=None,
    stabilized: bool = True,
    f=None,
    exactness: int | None = None,
    load_exactness: int | None = None,
) -> SaddleSystem:
    """Assemble the weak Galerkin Brinkman system with zero boundary velocity.

    ``f`` maps an (n, 2) point array to a (2, n) array; ``None`` means f = 0.
    ``load_exactness`` sets the cell quadrature used for (f, v0).
    """
    r = resolve_gradient_degree(k, stabilized, r)
    dm = build_dofmap(mesh, k)
    kinv = _kappa_per_cell(kappa_inv, mesh.n_cells)
    if exactness is None:
        exactness = default_exactness(k, r)
    if load_exactness is None:
        load_exactness = exactness
    cache = ElementOpsCache(mesh, k, r, exactness)
    index: dict = {}
    blocks: list[LocalBlock] = []
    cell_block = np.empty(mesh.n_cells, dtype=np.int64)
    loads = np.zeros((mesh.n_cells, 2 * dm.nk))
    for c in range(mesh.n_cells):
        key = (cache.key(c), kinv[c].tobytes())
        b = index.get(key)
        if b is None:
            ops = cache(c)
            A = ops.gradient_form() + ops.mass_form(kinv[c])
            if stabilized:
                A = A + ops.S
            b = index[key] = len(blocks)
            blocks.append(LocalBlock(A, -ops.Mp @ ops.D, ops.Mp[:, 0].copy()))
        cell_block[c] = b
        if f is not None:
            geom = CellGeometry.of_cell(mesh, c)
            quad = geom.quadrature(load_exactness)
            B0 = geom.cell_basis(k).values(quad.points)
            loads[c] = (np.asarray(f(quad.points)) @ (B0 * quad.weights).T).ravel()
    return SaddleSystem(dm, r, stabilized, kinv, cache, blocks, cell_block, loads)


@dataclass
class WGSolution:
    """Coefficients of a discrete solution.

    ``u0[c, i]`` are the P_k coefficients of component ``i`` on cell ``c``,
    ``ub[e, i]`` the P_k(e) coefficients on edge ``e`` (zero on the boundary),
    ``p[c]`` the P_{k-1} pressure coefficients.
    """

    dofmap: DofMap
    u0: np.ndarray
    ub: np.ndarray
    p: np.ndarray
    multiplier: float = 0.0
    residual: float = 0.0

    @property
    def k(self) -> int:
        return self.dofmap.k

    def velocity_vector(self) -> np.ndarray:
        """Full V_h vector (boundary edges included)."""
        return np.concatenate([self.u0.ravel(), self.ub.ravel()])

    def local_velocity(self, c: int) -> np.ndarray:
        return self.velocity_vector()[self.dofmap.full_velocity_dofs(c)]

    @classmethod
    def from_vectors(cls, dofmap: DofMap, velocity_full: np.ndarray, p: np.ndarray, multiplier=0.0, residual=0.0):
        m, nk, ne = dofmap.mesh, dofmap.nk, dofmap.ne
        n0 = m.n_cells * 2 * nk
        u0 = velocity_full[:n0].reshape(m.n_cells, 2, nk).copy()
        ub = velocity_full[n0:].reshape(m.n_edges, 2, ne).copy()
        return cls(dofmap, u0, ub, np.asarray(p).reshape(m.n_cells, -1).copy(), multiplier, residual)

    def dump(self, path) -> None:
        """Plain-text per-cell coefficients: ``cell c: u0x | u0y | p``."""
        with Path(path).open("w") as fh:
            fh.write(f"# k={self.k} cells={len(self.u0)}\n")
            for c in range(len(self.u0)):
                parts = [" ".join(f"{x:.16e}" for x in arr) for arr in (self.u0[c, 0], self.u0[c, 1], self.p[c])]
                fh.write(f"cell {c}: " + " | ".join(parts) + "\n")


def _full_from_reduced(dm: DofMap, x: np.ndarray) -> np.ndarray:
    m, nk, ne = dm.mesh, dm.nk, dm.ne
    n0 = m.n_cells * 2 * nk
    full = np.zeros(dm.n_full)
    full[:n0] = x[:n0]
    ub = full[n0:].reshape(m.n_edges, 2 * ne)
    interior = dm.edge_index >= 0
    ub[interior] = x[n0 : dm.n_u].reshape(-1, 2 * ne)
    return full


def restrict_to_reduced(dm: DofMap, full: np.ndarray) -> np.ndarray:
    """Drop boundary-edge blocks from a full V_h vector."""
    m, nk, ne = dm.mesh, dm.nk, dm.ne
    n0 = m.n_cells * 2 * nk
    ub = full[n0:].reshape(m.n_edges, 2 * ne)
    return np.concatenate([full[:n0], ub[dm.edge_index >= 0].ravel()])


def _factor(K: sp.spmatrix, natural: bool = False):
    """Sparse LU.  With ``natural`` the caller has already ordered K for fill."""
    try:
        if natural:
            return splu(
                sp.csc_matrix(K),
                permc_spec="NATURAL",
                diag_pivot_thresh=1e-3,
                options=dict(SymmetricMode=True),
            )
        return splu(sp.csc_matrix(K), permc_spec="MMD_ATA", diag_pivot_thresh=0.1)
    except RuntimeError as exc:
        raise SolverError(f"saddle-point factorization failed: {exc}") from exc


def residual_norm(system: SaddleSystem, velocity_full: np.ndarray, p: np.ndarray, multiplier: float) -> float:
    """||K x - F|| / ||F|| evaluated cell by cell, without forming K."""
    dm = system.dofmap
    x = np.zeros(dm.size)
    x[: dm.n_u] = restrict_to_reduced(dm, velocity_full)
    x[dm.n_u : dm.n_u + dm.n_p] = np.asarray(p).ravel()
    x[dm.multiplier] = multiplier
    out = -system.F
    for c in range(dm.mesh.n_cells):
        blk = system.block(c)
        g = dm.velocity_dofs(c)
        keep = g >= 0
        v = np.where(keep, x[np.maximum(g, 0)], 0.0)
        pd = dm.pressure_dofs(c)
        pc = x[pd]
        ru = blk.A @ v + blk.B.T @ pc
        out[g[keep]] += ru[keep]
        out[pd] += blk.B @ v + blk.mean * multiplier
        out[dm.multiplier] += blk.mean @ pc
    nF = np.linalg.norm(system.F)
    res = float(np.linalg.norm(out))
    return res / nF if nF > 0 else res


@dataclass(frozen=True)
class _Condensed:
    """Static condensation data for one LocalBlock.

    Local unknowns are ordered [velocity (ndof), pressure (npl)].  Pressures
    use the mean-free basis m_a - avg(m_a) for a >= 1, so only the constant
    mode couples to the mean constraint.  ``I`` (interior velocity and
    mean-free pressure) is eliminated; ``E`` (edge velocity and the constant
    pressure) stays global.
    """

    T: np.ndarray
    I: np.ndarray
    E: np.ndarray
    lu: tuple
    X: np.ndarray  # L_II^{-1} L_IE
    L_EI: np.ndarray
    S: np.ndarray  # L_EE - L_EI X


def _condense(blk: LocalBlock, nk: int):
    from scipy.linalg import lu_factor, lu_solve

    nd = blk.A.shape[0]
    npl = blk.B.shape[0]
    T = np.eye(npl)
    T[0, 1:] = -blk.mean[1:] / blk.mean[0]
    Bt = T.T @ blk.B
    L = np.zeros((nd + npl, nd + npl))
    L[:nd, :nd] = blk.A
    L[nd:, :nd] = Bt
    L[:nd, nd:] = Bt.T
    I = np.concatenate([np.arange(2 * nk), nd + np.arange(1, npl)])
    E = np.concatenate([np.arange(2 * nk, nd), [nd]])
    lu = lu_factor(L[np.ix_(I, I)])
    X = lu_solve(lu, L[np.ix_(I, E)])
    L_EI = L[np.ix_(E, I)]
    S = L[np.ix_(E, E)] - L_EI @ X
    return _Condensed(T, I, E, lu, X, L_EI, 0.5 * (S + S.T))


def _solve_condensed(system: SaddleSystem):
    from scipy.linalg import lu_solve

    dm = system.dofmap
    m, nk = dm.mesh, dm.nk
    nb = dm.n_interior_edges * 2 * dm.ne
    n_red = nb + m.n_cells + 1
    lam = n_red - 1
    cond = [_condense(b, nk) for b in system.blocks]
    base = m.n_cells * 2 * nk

    nE = 2 * dm.ne * max(len(ce) for ce in m.cell_edges) + 1
    gE_all = np.full((m.n_cells, nE), -1, dtype=np.int64)
    rhs = np.zeros(n_red)
    ys = []
    for c in range(m.n_cells):
        cd = cond[system.cell_block[c]]
        g = dm.velocity_dofs(c)[2 * nk :]
        gE_all[c, : len(g)] = np.where(g >= 0, g - base, -1)
        gE_all[c, len(cd.E) - 1] = nb + c
        FI = np.zeros(len(cd.I))
        FI[: 2 * nk] = system.loads[c]
        y = lu_solve(cd.lu, FI)
        ys.append(y)
        gE = gE_all[c, : len(cd.E)]
        keep = gE >= 0
        rhs[gE[keep]] -= (cd.L_EI @ y)[keep]
    # scatter the Schur blocks one block type at a time, int32 indices
    rows, cols, vals = [], [], []
    for b, cd in enumerate(cond):
        cells = np.flatnonzero(system.cell_block == b)
        if len(cells) == 0:
            continue
        nEb = len(cd.E)
        gE = gE_all[cells, :nEb].astype(np.int32)
        r = np.repeat(gE, nEb, axis=1).ravel()
        cc = np.tile(gE, (1, nEb)).ravel()
        v = np.broadcast_to(cd.S.ravel(), (len(cells), nEb * nEb)).ravel()
        keep = (r >= 0) & (cc >= 0)
        rows.append(r[keep])
        cols.append(cc[keep])
        vals.append(v[keep])
        del r, cc, v, keep
    mean0 = np.array([system.block(c).mean[0] for c in range(m.n_cells)])
    rows += [(nb + np.arange(m.n_cells)).astype(np.int32), np.full(m.n_cells, lam, dtype=np.int32)]
    cols += [np.full(m.n_cells, lam, dtype=np.int32), (nb + np.arange(m.n_cells)).astype(np.int32)]
    vals += [mean0, mean0]
    Kr = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_red, n_red)
    )
    del rows, cols, vals
    Kr.sum_duplicates()
    perm = condensed_ordering(m, dm.edge_index, 2 * dm.ne)
    Kp = Kr[perm][:, perm].tocsc()
    lu = _factor(Kp, natural=True)
    y = lu.solve(rhs[perm])
    # one step of refinement covers the relaxed pivoting threshold
    y += lu.solve(rhs[perm] - Kp @ y)
    xr = np.empty_like(y)
    xr[perm] = y
    if not np.all(np.isfinite(xr)):
        raise SolverError("non-finite solution")

    full = np.zeros(dm.n_full)
    p = np.zeros((m.n_cells, dm.n_pressure_local))
    ub = full[base:].reshape(m.n_edges, 2 * dm.ne)
    ub[dm.edge_index >= 0] = xr[:nb].reshape(-1, 2 * dm.ne)
    for c in range(m.n_cells):
        cd = cond[system.cell_block[c]]
        gE = gE_all[c, : len(cd.E)]
        xE = np.where(gE >= 0, xr[np.maximum(gE, 0)], 0.0)
        xI = ys[c] - cd.X @ xE
        full[c * 2 * nk : (c + 1) * 2 * nk] = xI[: 2 * nk]
        pt = np.concatenate([[xE[-1]], xI[2 * nk :]])
        p[c] = cd.T @ pt
    return full, p, float(xr[lam])


def _solve_full(system: SaddleSystem, permutation=None):
    K, F = system.K, system.F
    if permutation is not None:
        perm = np.asarray(permutation)
        K = K[perm][:, perm].tocsc()
        F = F[perm]
    x = _factor(K).solve(F)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution")
    if permutation is not None:
        y = np.empty_like(x)
        y[perm] = x
        x = y
    dm = system.dofmap
    p = x[dm.n_u : dm.n_u + dm.n_p].reshape(dm.mesh.n_cells, -1).copy()
    return _full_from_reduced(dm, x), p, float(x[dm.multiplier])


def solve(system: SaddleSystem, method: str = "condensed", permutation: np.ndarray | None = None) -> WGSolution:
    """Direct solve of the saddle-point system.

    ``method="condensed"`` eliminates cell-interior velocities and the
    mean-free part of each cell pressure before factorizing; ``"full"``
    factorizes K as assembled.  ``permutation`` (full method only) relabels
    the unknowns first.  The pressure is re-centred to zero mean afterwards
    and the relative residual of the full system is recorded.
    """
    if method == "condensed" and permutation is None:
        full, p, lam = _solve_condensed(system)
    elif method in ("full", "condensed"):
        full, p, lam = _solve_full(system, permutation)
    else:
        raise ValueError(f"unknown solve method {method!r}")
    residual = residual_norm(system, full, p, lam)
    mean = np.array([system.block(c).mean @ p[c] for c in range(len(p))]).sum()
    area = sum(system.block(c).mean[0] for c in range(len(p)))
    p[:, 0] -= mean / area
    return WGSolution.from_vectors(system.dofmap, full, p, lam, residual)
