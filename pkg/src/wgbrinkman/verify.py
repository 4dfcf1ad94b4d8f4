"""Manufactured solutions, discrete norms and convergence studies."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import build_mesh, mesh_metrics
from .polybasis import edge_basis, polygon_quadrature
from .system import SaddleSystem, WGSolution, assemble, resolve_gradient_degree, solve
from .weakops import CellGeometry, ElementOpsCache, project_cell, project_edge


class CaseIntegrityError(ValueError):
    """A manufactured case fails its divergence/boundary/mean checks."""


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact Brinkman solution on the unit square with mu = 1.

    All callables take an (n, 2) point array.  ``u`` and ``f`` return (2, n),
    ``grad_u`` returns (2, 2, n) with ``[i, j] = d u_i / d x_j``.
    """

    u: Callable
    grad_u: Callable
    p: Callable
    f: Callable
    kappa_inv: np.ndarray
    degree: int
    description: str = ""

    def div_u(self, pts):
        g = self.grad_u(pts)
        return g[0, 0] + g[1, 1]


# x^2 (1 - x)^2 and its derivatives
def _s(t):
    return t**2 - 2 * t**3 + t**4


def _s1(t):
    return 2 * t - 6 * t**2 + 4 * t**3


def _s2(t):
    return 2 - 12 * t + 12 * t**2


def _s3(t):
    return -12 + 24 * t


def brinkman_2d_case(kappa_inv=None, check: bool = True, seed: int = 0) -> ManufacturedCase:
    """Divergence-free polynomial velocity from the stream function
    psi = 4 x^2(1-x)^2 y^2(1-y)^2, u = (-psi_y, psi_x), with p = (x - 1/2)^3.

    ``f = -Laplace(u) + grad p + kappa^{-1} u``.
    """
    kinv = np.eye(2) if kappa_inv is None else np.asarray(kappa_inv, dtype=float)
    if kinv.ndim == 0:
        kinv = float(kinv) * np.eye(2)

    def u(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.array([-4 * _s(x) * _s1(y), 4 * _s1(x) * _s(y)])

    def grad_u(pts):
        x, y = pts[:, 0], pts[:, 1]
        return np.array(
            [
                [-4 * _s1(x) * _s1(y), -4 * _s(x) * _s2(y)],
                [4 * _s2(x) * _s(y), 4 * _s1(x) * _s1(y)],
            ]
        )

    def p(pts):
        return (pts[:, 0] - 0.5) ** 3

    def f(pts):
        x, y = pts[:, 0], pts[:, 1]
        lap1 = -4 * (_s2(x) * _s1(y) + _s(x) * _s3(y))
        lap2 = 4 * (_s3(x) * _s(y) + _s1(x) * _s2(y))
        uu = u(pts)
        return np.array(
            [
                -lap1 + 3 * (x - 0.5) ** 2 + kinv[0, 0] * uu[0] + kinv[0, 1] * uu[1],
                -lap2 + kinv[1, 0] * uu[0] + kinv[1, 1] * uu[1],
            ]
        )

    case = ManufacturedCase(u, grad_u, p, f, kinv, degree=7, description="stream-function case, p=(x-1/2)^3")
    if check:
        problems = case_integrity(case, seed=seed)
        if problems:
            raise CaseIntegrityError("; ".join(f"{k}={v:.3e}" for k, v in problems.items()))
    return case


def fd_source(case: ManufacturedCase, pts: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """-Laplace(u) + grad p + kappa^{-1} u from central differences of u and p.

    Evaluated in extended precision: a second difference with step 1e-5 loses
    about 1e-6 relative accuracy to cancellation in binary64.
    """
    x = np.asarray(pts, dtype=np.longdouble)
    h = np.longdouble(step)
    ex = np.array([h, 0], dtype=np.longdouble)
    ey = np.array([0, h], dtype=np.longdouble)
    u0 = case.u(x)
    lap = (case.u(x + ex) + case.u(x - ex) + case.u(x + ey) + case.u(x - ey) - 4 * u0) / h**2
    gp = np.array([(case.p(x + ex) - case.p(x - ex)) / (2 * h), (case.p(x + ey) - case.p(x - ey)) / (2 * h)])
    out = -lap + gp + case.kappa_inv.astype(np.longdouble) @ u0
    return out.astype(float)


def _boundary_samples(rng, n: int) -> np.ndarray:
    t = rng.random(n)
    side = rng.integers(0, 4, n)
    x = np.where(side == 0, t, np.where(side == 1, 1.0, np.where(side == 2, t, 0.0)))
    y = np.where(side == 0, 0.0, np.where(side == 1, t, np.where(side == 2, 1.0, t)))
    return np.column_stack([x, y])


UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def case_integrity(case: ManufacturedCase, seed: int = 0, n_div: int = 10_000, n_bdry: int = 1000, n_fd: int = 100) -> dict:
    """Defects that exceed their tolerances; an empty dict means the case is sound."""
    rng = np.random.default_rng(seed)
    bad = {}
    div = float(np.abs(case.div_u(rng.random((n_div, 2)))).max())
    if div > 1e-12:
        bad["divergence"] = div
    bd = float(np.abs(case.u(_boundary_samples(rng, n_bdry))).max())
    if bd > 1e-12:
        bad["boundary velocity"] = bd
    # composite rule on a 4x4 grid of squares, exact for the cubic pressure
    mean = 0.0
    for i in range(4):
        for j in range(4):
            q = polygon_quadrature((UNIT_SQUARE + [i, j]) / 4.0, 6)
            mean += q.integrate(case.p(q.points))
    if abs(mean) > 1e-12:
        bad["pressure mean"] = abs(mean)
    inner = 0.05 + 0.9 * rng.random((n_fd, 2))
    fd = float(np.abs(case.f(inner) - fd_source(case, inner)).max())
    if fd > 1e-8:
        bad["source vs finite differences"] = fd
    return bad


# ------------------------------------------------------------------ norms


def project_velocity(u, dofmap, exactness: int) -> np.ndarray:
    """Q_h u as a full V_h vector (boundary edge blocks included)."""
    m, k, nk, ne = dofmap.mesh, dofmap.k, dofmap.nk, dofmap.ne
    out = np.zeros(dofmap.n_full)
    for c in range(m.n_cells):
        geom = CellGeometry.of_cell(m, c)
        out[c * 2 * nk : (c + 1) * 2 * nk] = project_cell(u, geom, k, exactness).ravel()
    base = m.n_cells * 2 * nk
    for e in range(m.n_edges):
        out[base + e * 2 * ne : base + (e + 1) * 2 * ne] = project_edge(u, edge_basis(m, e, k), exactness).ravel()
    return out


def energy_norm(v: np.ndarray, dofmap, r: int, kappa_inv=None, ops: ElementOpsCache | None = None) -> float:
    """Triple-bar norm of a full V_h vector, by direct quadrature of its three terms.

    The weak gradient, the kappa-weighted interior mass and the scaled jump
    |v0 - vb|^2 on every cell boundary are each integrated pointwise, so this
    does not go through the assembled matrix.
    """
    m, k = dofmap.mesh, dofmap.k
    kinv = np.broadcast_to(np.eye(2) if kappa_inv is None else np.asarray(kappa_inv, float), (m.n_cells, 2, 2))
    if ops is None:
        ops = ElementOpsCache(m, k, r)
    ex = ops.exactness
    total = 0.0
    for c in range(m.n_cells):
        el = ops(c)
        lay = el.layout
        geom = CellGeometry.of_cell(m, c)
        vl = v[dofmap.full_velocity_dofs(c)]
        quad = geom.quadrature(ex)
        gvals = (el.G @ vl).reshape(4, -1) @ geom.cell_basis(r).values(quad.points)
        total += float(np.sum(quad.weights * (gvals**2).sum(0)))
        bk = geom.cell_basis(k)
        v0 = np.array([vl[lay.interior(0)], vl[lay.interior(1)]]) @ bk.values(quad.points)
        total += float(np.sum(quad.weights * np.einsum("iq,ij,jq->q", v0, kinv[c], v0)))
        jump = 0.0
        for l in range(geom.n_edges):
            rule = geom.edge_rule(l, ex)
            inner = np.array([vl[lay.interior(0)], vl[lay.interior(1)]]) @ bk.values(rule.points)
            eb = geom.edge_basis(l, k).values(rule.points)
            outer = np.array([vl[lay.edge(l, 0)], vl[lay.edge(l, 1)]]) @ eb
            jump += float(np.sum(rule.weights * ((inner - outer) ** 2).sum(0)))
        total += jump / geom.diameter
    return math.sqrt(total) if total >= 0 else float("nan")


@dataclass(frozen=True)
class ErrorTriple:
    l2_velocity: float
    energy: float
    l2_pressure: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.l2_velocity, self.energy, self.l2_pressure)


def compute_errors(
    sol: WGSolution,
    case: ManufacturedCase,
    r: int,
    kappa_inv=None,
    ops: ElementOpsCache | None = None,
    data_exactness: int | None = None,
) -> ErrorTriple:
    """||Q0 u - u0||, |||Q_h u - u_h||| and ||p - p_h||."""
    dm = sol.dofmap
    m, k, nk = dm.mesh, dm.k, dm.nk
    if data_exactness is None:
        data_exactness = k + case.degree
    Qu = project_velocity(case.u, dm, data_exactness)
    e = Qu - sol.velocity_vector()
    if kappa_inv is None:
        kappa_inv = case.kappa_inv
    energy = energy_norm(e, dm, r, kappa_inv, ops)
    l2u = 0.0
    l2p = 0.0
    p_ex = 2 * k + 4
    for c in range(m.n_cells):
        geom = CellGeometry.of_cell(m, c)
        q = geom.quadrature(2 * k + 2)
        e0 = e[c * 2 * nk : (c + 1) * 2 * nk].reshape(2, nk) @ geom.cell_basis(k).values(q.points)
        l2u += float(np.sum(q.weights * (e0**2).sum(0)))
        qp = geom.quadrature(p_ex)
        ph = sol.p[c] @ geom.cell_basis(k - 1).values(qp.points)
        l2p += float(np.sum(qp.weights * (case.p(qp.points) - ph) ** 2))
    return ErrorTriple(math.sqrt(l2u), energy, math.sqrt(l2p))


def projected_solution(case: ManufacturedCase, dofmap, data_exactness: int | None = None) -> WGSolution:
    """(Q_h u, Q p) packaged as a WGSolution."""
    m, k = dofmap.mesh, dofmap.k
    if data_exactness is None:
        data_exactness = k + case.degree
    full = project_velocity(case.u, dofmap, data_exactness)
    p = np.array([project_cell(case.p, CellGeometry.of_cell(m, c), k - 1, data_exactness) for c in range(m.n_cells)])
    return WGSolution.from_vectors(dofmap, full, p.reshape(m.n_cells, -1))


# ---------------------------------------------------------------- studies


class StudyError(RuntimeError):
    def __init__(self, level: int, stage: str, cause: Exception):
        super().__init__(f"level {level}: {stage} failed: {cause}")
        self.level = level
        self.stage = stage


def observed_rates(errors) -> list[float | None]:
    """log2(e_i / e_{i+1}) between consecutive levels; None for the first."""
    out: list[float | None] = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else float("nan"))
    return out


def table_format(x: float) -> str:
    """0.308E-4 style: three-digit mantissa in [0.1, 1)."""
    if x == 0 or not math.isfinite(x):
        return f"{x:.3f}E+0" if x == 0 else str(x)
    e = math.floor(math.log10(abs(x))) + 1
    mant = x / 10**e
    if round(abs(mant), 3) >= 1.0:
        mant /= 10
        e += 1
    sign = "+" if e > 0 else ("-" if e < 0 else "+")
    return f"{mant:.3f}E{sign}{abs(e)}" if e != 0 else f"{mant:.3f}E+0"


CSV_COLUMNS = ["level", "h", "e_l2u", "rate_l2u", "e_energy", "rate_energy", "e_p", "rate_p"]


@dataclass
class LevelResult:
    level: int
    h: float
    errors: ErrorTriple
    n_unknowns: int = 0
    residual: float = 0.0
    max_divergence: float = 0.0


@dataclass
class ConvergenceReport:
    family: str
    k: int
    r: int
    mode: str
    results: list[LevelResult] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def levels(self) -> list[int]:
        return [x.level for x in self.results]

    def column(self, name: str) -> list[float]:
        return [getattr(x.errors, name) for x in self.results]

    def rates(self, name: str) -> list[float | None]:
        return observed_rates(self.column(name))

    def last_rates(self) -> tuple[float, float, float]:
        return tuple(self.rates(n)[-1] for n in ("l2_velocity", "energy", "l2_pressure"))

    def header_lines(self) -> list[str]:
        meta = {"family": self.family, "k": self.k, "r": self.r, "mode": self.mode, **self.metadata}
        return [f"{k} = {v}" for k, v in meta.items()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for line in self.header_lines():
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        names = ("l2_velocity", "energy", "l2_pressure")
        rates = {n: self.rates(n) for n in names}
        for i, res in enumerate(self.results):
            row = [res.level, f"{res.h:.6e}"]
            for n in names:
                rate = rates[n][i]
                row += [f"{getattr(res.errors, n):.2E}", "" if rate is None else f"{rate:.1f}"]
            w.writerow(row)
        return buf.getvalue()

    def to_table(self) -> str:
        names = ("l2_velocity", "energy", "l2_pressure")
        rates = {n: self.rates(n) for n in names}
        title = f"P{self.k}-P{self.k}/P{self.k - 1}  family={self.family}  mode={self.mode}  r={self.r}"
        head = f"{'G_i':>4} | {'|Q0u-u0|':>10} {'rate':>5} | {'|||Qu-uh|||':>11} {'rate':>5} | {'|p-ph|':>10} {'rate':>5}"
        lines = [title, head, "-" * len(head)]
        for i, res in enumerate(self.results):
            cells = []
            for n, wdt in zip(names, (10, 11, 10)):
                rate = rates[n][i]
                cells.append(f"{table_format(getattr(res.errors, n)):>{wdt}} {'' if rate is None else f'{rate:.1f}':>5}")
            lines.append(f"{res.level:>4} | " + " | ".join(cells))
        return "\n".join(lines) + "\n"


def run_level(
    family: str,
    level: int,
    k: int,
    r: int | None = None,
    stabilized: bool = True,
    kappa_inv=None,
    case: ManufacturedCase | None = None,
) -> tuple[LevelResult, SaddleSystem, WGSolution]:
    """mesh -> assemble -> solve -> errors for one refinement level."""
    if case is None:
        case = brinkman_2d_case(kappa_inv)
    kinv = case.kappa_inv if kappa_inv is None else kappa_inv
    r = resolve_gradient_degree(k, stabilized, r)
    stage = "mesh"
    try:
        mesh = build_mesh(family, level)
        stage = "assembly"
        system = assemble(mesh, k, r, kinv, stabilized, case.f, load_exactness=k + case.degree)
        stage = "solve"
        sol = solve(system)
        stage = "errors"
        err = compute_errors(sol, case, r, kinv, ops=system.ops)
    except Exception as exc:
        raise StudyError(level, stage, exc) from exc
    divmax = max_weak_divergence(sol, system)
    res = LevelResult(level, mesh_metrics(mesh)[0], err, system.dofmap.size, sol.residual, divmax)
    return res, system, sol


def max_weak_divergence(sol: WGSolution, system: SaddleSystem) -> float:
    """max over cells of the P_{k-1} coefficients of div_w u_h."""
    dm = sol.dofmap
    v = sol.velocity_vector()
    worst = 0.0
    for c in range(dm.mesh.n_cells):
        ops = system.ops(c)
        worst = max(worst, float(np.abs(ops.D @ v[dm.full_velocity_dofs(c)]).max()))
    return worst


def convergence_study(
    family: str,
    k: int,
    levels,
    r: int | None = None,
    stabilized: bool = True,
    kappa_inv=None,
    case: ManufacturedCase | None = None,
) -> ConvergenceReport:
    levels = list(levels)
    if not levels or sorted(levels) != levels or len(set(levels)) != len(levels):
        raise ValueError("levels must be a nonempty ascending sequence")
    if case is None:
        case = brinkman_2d_case(kappa_inv)
    r = resolve_gradient_degree(k, stabilized, r)
    report = ConvergenceReport(family, k, r, "stab" if stabilized else "sf")
    for level in levels:
        res, _, _ = run_level(family, level, k, r, stabilized, kappa_inv, case)
        report.results.append(res)
    return report


__all__ = [
    "ManufacturedCase",
    "brinkman_2d_case",
    "case_integrity",
    "fd_source",
    "energy_norm",
    "compute_errors",
    "ErrorTriple",
    "ConvergenceReport",
    "convergence_study",
    "run_level",
    "projected_solution",
    "project_velocity",
    "table_format",
]
