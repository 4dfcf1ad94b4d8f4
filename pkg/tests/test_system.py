import numpy as np
import pytest
import scipy.sparse as sp

from wgbrinkman.mesh import build_mesh
from wgbrinkman.ordering import condensed_ordering, edge_graph
from wgbrinkman.polybasis import dim_p
from wgbrinkman.system import (
    AssemblyError,
    SolverError,
    _factor,
    assemble,
    build_dofmap,
    resolve_gradient_degree,
    restrict_to_reduced,
    solve,
)
from wgbrinkman.verify import compute_errors, max_weak_divergence, projected_solution

MODES = [True, False]


@pytest.mark.parametrize("family", ["tri", "poly"])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_dofmap_counts(family, k):
    m = build_mesh(family, 2)
    dm = build_dofmap(m, k)
    n_int = m.n_edges - len(m.boundary_edges)
    assert dm.n_u == 2 * dim_p(k) * m.n_cells + 2 * (k + 1) * n_int
    assert dm.n_p == dim_p(k - 1) * m.n_cells
    assert dm.size == dm.n_u + dm.n_p + 1
    assert dm.partition_ok()


def test_velocity_dofs_mark_boundary_edges():
    m = build_mesh("tri", 1)
    dm = build_dofmap(m, 1)
    for c in range(m.n_cells):
        g = dm.velocity_dofs(c)[2 * dm.nk :].reshape(-1, 2 * dm.ne)
        for l, e in enumerate(m.cell_edges[c]):
            assert np.all(g[l] < 0) == bool(m.is_boundary_edge[e])


@pytest.mark.parametrize("family", ["tri", "poly"])
@pytest.mark.parametrize("stabilized", MODES)
def test_matrix_symmetric_and_velocity_block_positive(family, stabilized):
    s = assemble(build_mesh(family, 1), 2, stabilized=stabilized)
    assert s.symmetry_defect() <= 1e-14
    ev = np.linalg.eigvalsh(s.A.toarray())
    assert ev[0] > 1e-8 * ev[-1]


@pytest.mark.parametrize("family", ["tri", "poly"])
def test_constant_pressure_is_in_kernel_of_divergence_transpose(family):
    # sum over cells of (div_w v, 1) telescopes to the boundary, where vb = 0
    s = assemble(build_mesh(family, 2), 2)
    dm = s.dofmap
    q = np.zeros(dm.n_p)
    q[:: dm.n_pressure_local] = 1.0
    Bt1 = s.B.T @ q
    assert np.abs(Bt1).max() <= 1e-13 * abs(s.B).max()


@pytest.mark.parametrize("family", ["tri", "poly"])
@pytest.mark.parametrize("stabilized", MODES)
def test_condensed_matches_full(family, stabilized, case):
    s = assemble(build_mesh(family, 2), 2, stabilized=stabilized, f=case.f, load_exactness=9)
    a = solve(s)
    b = solve(s, method="full")
    assert np.allclose(a.velocity_vector(), b.velocity_vector(), atol=1e-10)
    assert np.allclose(a.p, b.p, atol=1e-10)
    assert a.residual <= 1e-11 and b.residual <= 1e-11


@pytest.mark.parametrize("stabilized", MODES)
def test_zero_data_gives_zero_solution(stabilized):
    sol = solve(assemble(build_mesh("poly", 2), 2, stabilized=stabilized))
    assert np.abs(sol.velocity_vector()).max() == 0.0
    assert np.abs(sol.p).max() == 0.0


def test_permutation_invariance(case):
    s = assemble(build_mesh("poly", 2), 2, f=case.f, load_exactness=9)
    ref = solve(s)
    perm = np.random.default_rng(3).permutation(s.dofmap.size)
    other = solve(s, method="full", permutation=perm)
    scale = np.abs(ref.velocity_vector()).max()
    assert np.abs(ref.velocity_vector() - other.velocity_vector()).max() <= 1e-9 * scale
    assert np.abs(ref.p - other.p).max() <= 1e-9 * np.abs(ref.p).max()


def test_pressure_has_zero_mean(case):
    s = assemble(build_mesh("tri", 2), 2, f=case.f, load_exactness=9)
    sol = solve(s)
    mean = sum(s.block(c).mean @ sol.p[c] for c in range(len(sol.p)))
    assert abs(mean) <= 1e-14


def test_discrete_velocity_is_weakly_divergence_free(case):
    s = assemble(build_mesh("poly", 3), 2, f=case.f, load_exactness=9)
    sol = solve(s)
    assert max_weak_divergence(sol, s) <= 1e-9


def test_projected_exact_solution_has_zero_velocity_errors(case):
    s = assemble(build_mesh("poly", 2), 2)
    sol = projected_solution(case, s.dofmap)
    err = compute_errors(sol, case, s.r, ops=s.ops)
    assert err.l2_velocity <= 1e-12
    assert err.energy <= 1e-12


def test_anisotropic_kappa(case):
    from wgbrinkman.verify import brinkman_2d_case

    kinv = np.linalg.inv(np.array([[2.0, 0.5], [0.5, 1.0]]))
    c = brinkman_2d_case(kinv)
    s = assemble(build_mesh("tri", 3), 2, kappa_inv=kinv, f=c.f, load_exactness=9)
    sol = solve(s)
    err = compute_errors(sol, c, s.r, kinv, ops=s.ops)
    ref = compute_errors(solve(assemble(build_mesh("tri", 3), 2, f=case.f, load_exactness=9)), case, 1)
    # same discretization, a mild change of the zero-order term
    assert err.energy == pytest.approx(ref.energy, rel=0.2)
    assert sol.residual <= 1e-11


@pytest.mark.parametrize("kinv", [np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([[1.0, 0.1], [0.0, 1.0]]), -1.0])
def test_rejects_bad_kappa(kinv):
    with pytest.raises(AssemblyError):
        assemble(build_mesh("tri", 1), 1, kappa_inv=kinv)


def test_gradient_degree_rules():
    assert resolve_gradient_degree(2, True, None) == 1
    assert resolve_gradient_degree(2, False, None) == 5
    assert resolve_gradient_degree(2, False, 3) == 3
    with pytest.raises(AssemblyError):
        resolve_gradient_degree(2, True, 0)
    with pytest.raises(AssemblyError):
        resolve_gradient_degree(2, False, 2)


def test_singular_matrix_raises_solver_error():
    with pytest.raises(SolverError):
        _factor(sp.csc_matrix((3, 3)))


def test_unknown_method():
    with pytest.raises(ValueError):
        solve(assemble(build_mesh("tri", 1), 1), method="cg")


def test_system_dump_round_trip(tmp_path, case):
    s = assemble(build_mesh("tri", 1), 1, f=case.f, load_exactness=8)
    path = tmp_path / "k.txt"
    s.dump(path)
    rows = np.loadtxt(path, comments="#")
    mat = rows[rows[:, 1] >= 0]
    rhs = rows[rows[:, 1] < 0]
    K = sp.coo_matrix((mat[:, 2], (mat[:, 0].astype(int), mat[:, 1].astype(int))), shape=s.K.shape)
    assert abs(K - s.K).max() == 0.0
    F = np.zeros(s.dofmap.size)
    F[rhs[:, 0].astype(int)] = rhs[:, 2]
    assert np.array_equal(F, s.F)


def test_solution_dump(tmp_path, case):
    s = assemble(build_mesh("tri", 1), 2, f=case.f, load_exactness=9)
    sol = solve(s)
    path = tmp_path / "u.txt"
    sol.dump(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# k=2 cells=8"
    assert len(lines) == 9
    u0x, u0y, p = lines[1].split(": ", 1)[1].split(" | ")
    assert np.allclose([float(x) for x in u0x.split()], sol.u0[0, 0], rtol=1e-15)
    assert len(p.split()) == 3


def test_restrict_to_reduced_inverts_layout():
    m = build_mesh("poly", 1)
    dm = build_dofmap(m, 1)
    full = np.arange(dm.n_full, dtype=float)
    red = restrict_to_reduced(dm, full)
    assert len(red) == dm.n_u


def test_ordering_is_a_permutation():
    m = build_mesh("poly", 3)
    dm = build_dofmap(m, 2)
    perm = condensed_ordering(m, dm.edge_index, 2 * dm.ne)
    n = dm.n_interior_edges * 2 * dm.ne + m.n_cells + 1
    assert np.array_equal(np.sort(perm), np.arange(n))
    assert perm[-1] == n - 1


def test_edge_graph_links_edges_of_a_cell():
    m = build_mesh("tri", 1)
    G = edge_graph(m, np.ones(m.n_edges, dtype=bool))
    assert G.diagonal().sum() == 0
    e = m.cell_edges[0]
    assert G[e[0], e[1]] > 0 and G[e[1], e[2]] > 0
