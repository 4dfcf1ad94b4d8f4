import math

import numpy as np
import pytest

import wgbrinkman.verify as V
from wgbrinkman.checks import random_interior_vector
from wgbrinkman.mesh import build_mesh
from wgbrinkman.system import assemble, restrict_to_reduced
from wgbrinkman.verify import (
    CSV_COLUMNS,
    CaseIntegrityError,
    ConvergenceReport,
    ErrorTriple,
    LevelResult,
    ManufacturedCase,
    StudyError,
    brinkman_2d_case,
    case_integrity,
    convergence_study,
    energy_norm,
    fd_source,
    observed_rates,
    table_format,
)


def _pts(n=50, seed=0):
    return np.random.default_rng(seed).random((n, 2))


def test_first_velocity_component_matches_reference_form(case):
    x, y = _pts().T
    u1 = -8 * (x**2 - 2 * x**3 + x**4) * (y - 3 * y**2 + 2 * y**3)
    assert np.allclose(case.u(_pts())[0], u1, rtol=1e-14, atol=1e-16)


def test_second_velocity_component_is_the_divergence_free_partner(case):
    x, y = _pts().T
    u2 = 8 * (x - 3 * x**2 + 2 * x**3) * (y**2 - 2 * y**3 + y**4)
    assert np.allclose(case.u(_pts())[1], u2, rtol=1e-14, atol=1e-16)


def test_swapped_variable_variant_is_not_divergence_free():
    # 8 (y - 3x^2 + 2x^3)(x^2 - 2x^3 + x^4) with the same first component
    # has d/dy = 8 (x^2 - 2x^3 + x^4) while d u1/dx is not its negative
    x, y = 0.3, 0.6
    du1dx = -8 * (2 * x - 6 * x**2 + 4 * x**3) * (y - 3 * y**2 + 2 * y**3)
    du2dy = 8 * (x**2 - 2 * x**3 + x**4)
    assert abs(du1dx + du2dy) > 1e-2


def test_pressure_is_cubic_with_zero_mean(case):
    assert case.p(np.array([[0.75, 0.2]]))[0] == pytest.approx(0.25**3)
    assert case_integrity(case).get("pressure mean") is None


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_case_integrity(seed, case):
    assert case_integrity(case, seed=seed) == {}


def test_gradient_matches_differences(case):
    pts = _pts(20, 4)
    h = 1e-6
    g = case.grad_u(pts)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (case.u(pts + e) - case.u(pts - e)) / (2 * h)
        assert np.allclose(g[:, j], fd, atol=1e-8)


def test_source_matches_finite_differences(case):
    pts = 0.05 + 0.9 * _pts(100, 9)
    assert np.abs(case.f(pts) - fd_source(case, pts)).max() <= 1e-8


def test_anisotropic_source_matches_finite_differences():
    kinv = np.array([[3.0, -1.0], [-1.0, 2.0]])
    c = brinkman_2d_case(kinv)
    pts = 0.05 + 0.9 * _pts(100, 2)
    assert np.abs(c.f(pts) - fd_source(c, pts)).max() <= 1e-8


def test_broken_case_is_rejected(case):
    bad = ManufacturedCase(case.u, case.grad_u, case.p, lambda p: 1.01 * case.f(p), case.kappa_inv, case.degree)
    assert "source vs finite differences" in case_integrity(bad)
    with pytest.raises(CaseIntegrityError):
        raise CaseIntegrityError(str(case_integrity(bad)))


@pytest.mark.parametrize(
    "x,text",
    [(0.308e-4, "0.308E-4"), (0.119e-1, "0.119E-1"), (0.217, "0.217E+0"), (1.5, "0.150E+1"), (0.9996e-3, "0.100E-2")],
)
def test_table_format(x, text):
    assert table_format(x) == text


def test_observed_rates():
    r = observed_rates([1.0, 0.25, 0.0625])
    assert r[0] is None
    assert r[1:] == pytest.approx([2.0, 2.0])


def _report():
    rep = ConvergenceReport("tri", 1, 0, "stab")
    for lev, e in zip((4, 5, 6), (1.0, 0.25, 0.0625)):
        rep.results.append(LevelResult(lev, 2.0**-lev, ErrorTriple(e, 2 * e, 3 * e)))
    return rep


def test_csv_layout():
    lines = _report().to_csv().splitlines()
    assert [ln for ln in lines if ln.startswith("#")] == ["# family = tri", "# k = 1", "# r = 0", "# mode = stab"]
    data = [ln for ln in lines if not ln.startswith("#")]
    assert data[0].split(",") == CSV_COLUMNS
    assert len(data) == 4
    assert data[1].split(",")[3] == ""
    assert data[2].split(",") == ["5", "3.125000e-02", "2.50E-01", "2.0", "5.00E-01", "2.0", "7.50E-01", "2.0"]


def test_table_layout():
    text = _report().to_table()
    assert "0.625E-1" in text
    assert text.splitlines()[0].startswith("P1-P1/P0")


def test_last_rates():
    assert _report().last_rates() == pytest.approx((2.0, 2.0, 2.0))


@pytest.mark.parametrize("family", ["tri", "poly"])
@pytest.mark.parametrize("k", [1, 2])
def test_energy_norm_matches_stabilized_matrix(family, k, rng):
    s = assemble(build_mesh(family, 2), k)
    for _ in range(3):
        v = random_interior_vector(s.dofmap, rng)
        vr = restrict_to_reduced(s.dofmap, v)
        assert energy_norm(v, s.dofmap, s.r, ops=s.ops) == pytest.approx(math.sqrt(vr @ (s.A @ vr)), rel=1e-11)


def test_energy_norm_of_zero():
    s = assemble(build_mesh("tri", 1), 1)
    assert energy_norm(np.zeros(s.dofmap.n_full), s.dofmap, s.r) == 0.0


def test_small_study_rates(case):
    rep = convergence_study("tri", 1, [2, 3, 4], case=case)
    l2, en, pr = rep.last_rates()
    assert l2 == pytest.approx(2.0, abs=0.2)
    assert en == pytest.approx(1.0, abs=0.1)
    assert pr == pytest.approx(1.0, abs=0.2)
    assert all(r.residual <= 1e-10 for r in rep.results)


def test_levels_must_ascend():
    with pytest.raises(ValueError):
        convergence_study("tri", 1, [3, 2])
    with pytest.raises(ValueError):
        convergence_study("tri", 1, [])


def test_study_error_names_stage(monkeypatch, case):
    def boom(*a, **kw):
        raise RuntimeError("singular")

    monkeypatch.setattr(V, "solve", boom)
    with pytest.raises(StudyError) as info:
        convergence_study("tri", 1, [1], case=case)
    assert info.value.stage == "solve" and info.value.level == 1
    assert "solve failed" in str(info.value)


@pytest.mark.parametrize("k", [1, 2])
def test_diagonal_direction_does_not_change_errors(k, case):
    # x -> 1 - x turns the SW-NE triangulation into the SE-NW one; psi is
    # even and p odd under this mirror, so every error norm is preserved
    from wgbrinkman.mesh import Mesh2D
    from wgbrinkman.system import solve
    from wgbrinkman.verify import compute_errors

    m = build_mesh("tri", 3)
    xy = m.vertices.copy()
    xy[:, 0] = 1.0 - xy[:, 0]
    mirrored = Mesh2D(xy, tuple(tuple(reversed(c)) for c in m.cells), level=3)
    errs = []
    for mesh in (m, mirrored):
        s = assemble(mesh, k, f=case.f, load_exactness=k + case.degree)
        errs.append(compute_errors(solve(s), case, s.r, ops=s.ops))
    for name in ("l2_velocity", "energy", "l2_pressure"):
        assert getattr(errs[1], name) == pytest.approx(getattr(errs[0], name), rel=1e-9)
