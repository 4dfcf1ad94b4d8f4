"""Fast invariant checks shared by ``wgbrinkman check`` and the test suite.

Each group returns a :class:`CheckResult`; the worst measured defect is
reported next to its tolerance so the output is deterministic for a seed.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import FAMILIES, Mesh2D, build_mesh, polygon_area, read_mesh, validate_mesh, write_mesh
from .polybasis import TriangulationError, dim_p, edge_quadrature, polygon_quadrature, sub_triangles
from .system import assemble, restrict_to_reduced, solve
from .verify import energy_norm
from .weakops import CellGeometry, ElementOpsCache, LocalDofLayout, commutativity_defect, element_ops, local_projection


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# ---------------------------------------------------------------- samplers


def _cross(u, w) -> float:
    return u[0] * w[1] - u[1] * w[0]


def _simple(xy: np.ndarray) -> bool:
    n = len(xy)
    if polygon_area(xy) <= 0:
        return False
    for a in range(n):
        for b in range(a + 2, n):
            if a == 0 and b == n - 1:
                continue
            p1, p2, p3, p4 = xy[a], xy[(a + 1) % n], xy[b], xy[(b + 1) % n]
            d1 = _cross(p2 - p1, p3 - p1)
            d2 = _cross(p2 - p1, p4 - p1)
            d3 = _cross(p4 - p3, p1 - p3)
            d4 = _cross(p4 - p3, p2 - p3)
            if d1 * d2 < 0 and d3 * d4 < 0:
                return False
    return True


def _aspect(xy: np.ndarray) -> float:
    diam = max(np.hypot(*(a - b)) for a in xy for b in xy)
    return diam**2 / polygon_area(xy)


def random_cells(family: str, n: int, rng: np.random.Generator) -> list[CellGeometry]:
    """Distorted copies of the family's cells: random similarity, mild
    stretch and shear, and vertex jitter.

    Shapes whose diameter^2 / area exceeds 1.5 times that of the undistorted
    cell are rejected, so the sample stays within the shape regularity of
    the family.  Edge orientations are drawn at random, as they would be in
    a mesh with arbitrary vertex numbering.
    """
    m = build_mesh(family, 1)
    out = []
    while len(out) < n:
        xy = m.cell_vertices(int(rng.integers(m.n_cells)))
        limit = 1.5 * _aspect(xy)
        th = rng.uniform(0, 2 * np.pi)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        shear = np.array([[1.0, rng.uniform(-0.2, 0.2)], [0.0, 1.0]])
        L = rot @ shear @ np.diag(rng.uniform(0.8, 1.25, 2)) * 10.0 ** rng.uniform(-2, 0)
        pts = (xy - xy.mean(0)) @ L.T + rng.uniform(-1, 1, 2)
        diam = max(np.hypot(*(a - b)) for a in pts for b in pts)
        pts = pts + rng.uniform(-0.03, 0.03, pts.shape) * diam
        if not _simple(pts) or _aspect(pts) > limit:
            continue
        try:
            sub_triangles(pts)
        except TriangulationError:
            continue
        signs = rng.choice([-1, 1], size=len(pts))
        out.append(CellGeometry.from_vertices(pts, signs))
    return out


def random_polynomial_field(k: int, rng: np.random.Generator, center=(0.0, 0.0), scale=1.0):
    """A random u in [P_k]^2 with its gradient (2, 2, n) and divergence."""
    ex = [(d - j, j) for d in range(k + 1) for j in range(d + 1)]
    coef = rng.standard_normal((2, len(ex)))
    c0 = np.asarray(center, dtype=float)

    def _s(pts):
        return (np.asarray(pts) - c0) / scale

    def u(pts):
        s = _s(pts)
        return np.array([sum(c * s[:, 0] ** a * s[:, 1] ** b for c, (a, b) in zip(coef[i], ex)) for i in range(2)])

    def grad_u(pts):
        s = _s(pts)
        out = np.zeros((2, 2, len(s)))
        for i in range(2):
            for c, (a, b) in zip(coef[i], ex):
                if a:
                    out[i, 0] += c * a * s[:, 0] ** (a - 1) * s[:, 1] ** b / scale
                if b:
                    out[i, 1] += c * b * s[:, 0] ** a * s[:, 1] ** (b - 1) / scale
        return out

    def div_u(pts):
        g = grad_u(pts)
        return g[0, 0] + g[1, 1]

    return u, grad_u, div_u


# ---------------------------------------------------------------- oracles


def green_moment(xy: np.ndarray, a: int, b: int) -> float:
    """Integral of (x^a y^b) over a polygon, as the boundary integral of
    x^(a+1) y^b / (a+1) dy, evaluated edge by edge with 1D Gauss rules."""
    n = len(xy)
    total = 0.0
    rule = edge_quadrature(a + b + 2)
    for j in range(n):
        p, q = xy[j], xy[(j + 1) % n]
        t = rule.points
        x = p[0] + t * (q[0] - p[0])
        y = p[1] + t * (q[1] - p[1])
        total += float(np.dot(rule.weights, x ** (a + 1) * y**b)) * (q[1] - p[1]) / (a + 1)
    return total


# ---------------------------------------------------------------- groups


def check_mesh(rng: np.random.Generator, levels=(1, 2, 3)) -> CheckResult:
    problems = []
    for fam in sorted(FAMILIES):
        for lev in levels:
            m = build_mesh(fam, lev)
            problems += [f"{fam}/{lev}: {p}" for p in validate_mesh(m)]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "mesh.txt"
            write_mesh(m, path)
            back = read_mesh(path, m.level)
            if not (np.array_equal(back.vertices, m.vertices) and back.cells == m.cells):
                problems.append(f"{fam}: text round trip changed the mesh")
    detail = f"{2 * len(levels)} meshes valid, round trip exact" if not problems else problems[0]
    return CheckResult("mesh", not problems, detail)


def check_quadrature(rng: np.random.Generator, n_cells: int = 6, max_degree: int = 10, tol: float = 1e-12) -> CheckResult:
    worst = 0.0
    for fam in sorted(FAMILIES):
        for geom in random_cells(fam, n_cells, rng):
            xy = geom.vertices - geom.centroid
            for d in range(max_degree + 1):
                q = polygon_quadrature(xy, d)
                for a in range(d + 1):
                    b = d - a
                    exact = green_moment(xy, a, b)
                    got = q.integrate(q.points[:, 0] ** a * q.points[:, 1] ** b)
                    ref = green_moment(xy, 0, 0) * geom.diameter**d
                    worst = max(worst, abs(got - exact) / ref)
    for d in range(2 * max_degree + 2):
        r = edge_quadrature(d)
        worst = max(worst, abs(float(np.dot(r.weights, r.points**d)) - 1.0 / (d + 1)))
    return CheckResult("quadrature", worst <= tol, f"max relative moment error {worst:.1e} (tol {tol:.0e})")


def check_kernel(rng: np.random.Generator, n_cells: int = 4, tol: float = 1e-12) -> CheckResult:
    """Constants lie in the kernels of grad_w and div_w; Q_h P_k lies in the
    kernel of the stabilizer; S is symmetric positive semidefinite.

    Defects are measured relative to the operator and vector sizes: with
    r = k + 3 the P_r mass matrix is so badly conditioned that absolute
    coefficient defects reach 1e-4 even though the operator is exact.
    """
    worst = 0.0
    for fam in sorted(FAMILIES):
        for geom in random_cells(fam, n_cells, rng):
            for k in (1, 2, 3):
                for r in (k - 1, k + 3):
                    ops = element_ops(geom, k, r)
                    c = rng.standard_normal(2)
                    v = ops.layout.constant_pair(c)
                    nv = np.abs(v).max()
                    worst = max(worst, np.abs(ops.G @ v).max() / (np.abs(ops.G).sum(1).max() * nv))
                    worst = max(worst, np.abs(ops.D @ v).max() / (np.abs(ops.D).sum(1).max() * nv))
                u, _, _ = random_polynomial_field(k, rng, geom.centroid, geom.diameter)
                w = local_projection(u, geom, k, 2 * k + 2)
                S = ops.S
                worst = max(worst, np.abs(S @ w).max() / (np.abs(S).sum(1).max() * np.abs(w).max()))
                worst = max(worst, np.abs(S - S.T).max() / np.abs(S).max())
                ev = np.linalg.eigvalsh(S)
                worst = max(worst, max(0.0, -ev[0]) / ev[-1])
    return CheckResult("kernel", worst <= tol, f"max relative kernel defect {worst:.1e} (tol {tol:.0e})")


def check_commutativity(rng: np.random.Generator, n_cells: int = 10, ks=(1, 2, 3), tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    count = 0
    for fam in sorted(FAMILIES):
        for geom in random_cells(fam, n_cells, rng):
            for k in ks:
                u, gu, du = random_polynomial_field(k, rng, geom.centroid, geom.diameter)
                worst = max(worst, commutativity_defect(u, gu, du, geom, k, 2 * k + 2, relative=True))
                count += 1
    return CheckResult(
        "commutativity", worst <= tol, f"{count} cell/degree pairs, max scaled coefficient defect {worst:.1e} (tol {tol:.0e})"
    )


def random_interior_vector(dofmap, rng: np.random.Generator) -> np.ndarray:
    """A random full V_h vector vanishing on boundary edges."""
    v = rng.standard_normal(dofmap.n_full)
    m = dofmap.mesh
    base = m.n_cells * 2 * dofmap.nk
    ub = v[base:].reshape(m.n_edges, 2 * dofmap.ne)
    ub[m.is_boundary_edge] = 0.0
    return v


def norm_axioms(mesh: Mesh2D, k: int, rng: np.random.Generator, n_vectors: int = 20) -> dict:
    """Worst defects of the energy-norm axioms on random V_h^0 vectors,
    plus its agreement with sqrt(v^T A v) for the stabilized matrix."""
    system = assemble(mesh, k, stabilized=True)
    dm = system.dofmap
    ops = ElementOpsCache(mesh, k, system.r)
    A = system.A

    def nrm(v):
        return energy_norm(v, dm, system.r, ops=ops)

    out = {"zero": nrm(np.zeros(dm.n_full)), "definite": math.inf, "homogeneity": 0.0, "triangle": 0.0, "matrix": 0.0}
    for _ in range(n_vectors):
        u = random_interior_vector(dm, rng)
        v = random_interior_vector(dm, rng)
        alpha = float(rng.uniform(-5, 5))
        nu, nv = nrm(u), nrm(v)
        out["definite"] = min(out["definite"], nu / np.abs(u).max())
        out["homogeneity"] = max(out["homogeneity"], abs(nrm(alpha * u) - abs(alpha) * nu) / (abs(alpha) * nu))
        out["triangle"] = max(out["triangle"], (nrm(u + v) - nu - nv) / (nu + nv))
        ur = restrict_to_reduced(dm, u)
        quad = float(ur @ (A @ ur))
        mat = math.sqrt(quad) if quad >= 0 else -math.sqrt(-quad)
        out["matrix"] = max(out["matrix"], abs(nu - mat) / nu)
    return out


def check_norm_axioms(rng: np.random.Generator, n_vectors: int = 20, slack: float = 1e-12, match: float = 1e-11) -> CheckResult:
    failures = []
    worst = {"homogeneity": 0.0, "triangle": 0.0, "matrix": 0.0}
    for fam in sorted(FAMILIES):
        for k in (1, 2):
            d = norm_axioms(build_mesh(fam, 2), k, rng, n_vectors)
            if d["zero"] != 0.0 or not d["definite"] > 0:
                failures.append(f"{fam} k={k}: definiteness")
            for key in worst:
                worst[key] = max(worst[key], d[key])
    if worst["homogeneity"] > slack or worst["triangle"] > slack:
        failures.append(f"homogeneity {worst['homogeneity']:.1e} / triangle {worst['triangle']:.1e}")
    if worst["matrix"] > match:
        failures.append(f"energy norm differs from sqrt(v^T A v) by {worst['matrix']:.1e}")
    detail = (
        f"homogeneity {worst['homogeneity']:.1e}, triangle {worst['triangle']:.1e}, "
        f"vs matrix {worst['matrix']:.1e}"
    )
    return CheckResult("norm axioms", not failures, detail if not failures else failures[0])


def check_solve(rng: np.random.Generator, tol_zero: float = 1e-12, tol_perm: float = 1e-9) -> CheckResult:
    """Zero data gives the zero solution; the solution does not depend on
    the numbering of the unknowns; the solver residual is small."""
    from .verify import brinkman_2d_case

    case = brinkman_2d_case(check=False)
    worst_zero = worst_perm = worst_res = 0.0
    for fam in sorted(FAMILIES):
        for stab in (True, False):
            m = build_mesh(fam, 2)
            zero = solve(assemble(m, 2, stabilized=stab))
            worst_zero = max(worst_zero, np.abs(zero.velocity_vector()).max(), np.abs(zero.p).max())
            sysm = assemble(m, 2, stabilized=stab, f=case.f, load_exactness=2 + case.degree)
            a = solve(sysm)
            perm = rng.permutation(sysm.dofmap.size)
            b = solve(sysm, method="full", permutation=perm)
            scale = max(np.abs(a.velocity_vector()).max(), np.abs(a.p).max())
            dv = np.abs(a.velocity_vector() - b.velocity_vector()).max()
            dp = np.abs(a.p - b.p).max()
            worst_perm = max(worst_perm, max(dv, dp) / scale)
            worst_res = max(worst_res, a.residual, b.residual)
    ok = worst_zero <= tol_zero and worst_perm <= tol_perm and worst_res <= 1e-10
    return CheckResult(
        "solve", ok, f"zero-rhs {worst_zero:.1e}, permutation {worst_perm:.1e}, residual {worst_res:.1e}"
    )


GROUPS = (check_mesh, check_quadrature, check_kernel, check_commutativity, check_norm_axioms, check_solve)


def run_checks(seed: int = 0) -> list[CheckResult]:
    """All groups in a fixed order, each with its own seeded generator."""
    out = []
    for i, group in enumerate(GROUPS):
        rng = np.random.default_rng([seed, i])
        try:
            out.append(group(rng))
        except Exception as exc:  # a crash is a failure of that group
            name = group.__name__.removeprefix("check_").replace("_", " ")
            out.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return out
