import math

import numpy as np
import pytest

import wgbrinkman.cli as C
from wgbrinkman.cli import main, parse_kappa, parse_levels
from wgbrinkman.mesh import build_mesh
from wgbrinkman.system import build_dofmap
from wgbrinkman.verify import brinkman_2d_case, projected_solution
from wgbrinkman.weakops import CellGeometry


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _fields(out):
    rows = {}
    for line in out.splitlines():
        if line and not line.startswith("#"):
            key, val = line.rsplit(None, 1)
            rows[key.strip()] = val
    return rows


@pytest.mark.slow
def test_check_passes_and_is_deterministic(capsys):
    code, out, _ = _run(capsys, "check", "--seed", "7")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) >= 6 and all(ln.startswith("PASS ") for ln in lines)
    _, again, _ = _run(capsys, "check", "--seed", "7")
    assert again == out


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--k", "9"],
        ["convergence", "--levels", "5..x"],
        ["convergence", "--levels", "5..4"],
        ["solve", "--mode", "sf", "--r", "1", "--k", "2"],
        ["solve", "--kappa", "1,2,3"],
        ["solve", "--kappa", "1,2,2,1"],
        ["solve", "--family", "hex"],
        ["convergence", "--format", "json"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_missing_config_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["solve", "--config", str(tmp_path / "none.ini")])
    assert info.value.code == 2


def test_unknown_config_key_is_usage_error(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nlevle = 3\n")
    with pytest.raises(SystemExit) as info:
        main(["solve", "--config", str(ini)])
    assert info.value.code == 2


def test_parse_helpers():
    assert parse_levels("2..4") == (2, 3, 4)
    assert parse_levels("3") == (3,)
    assert np.array_equal(parse_kappa("2"), 2 * np.eye(2))
    assert np.array_equal(parse_kappa("2,1,1,2"), [[2, 1], [1, 2]])


def test_convergence_csv(capsys):
    code, out, _ = _run(capsys, "convergence", "--levels", "1..3", "--format", "csv")
    assert code == 0
    comments = [ln for ln in out.splitlines() if ln.startswith("#")]
    data = [ln for ln in out.splitlines() if ln and not ln.startswith("#")]
    assert "# family = tri" in comments and "# seed = 0" in comments
    assert any(c.startswith("# version = ") for c in comments)
    assert data[0] == "level,h,e_l2u,rate_l2u,e_energy,rate_energy,e_p,rate_p"
    assert len(data) == 4
    assert all(len(row.split(",")) == 8 for row in data)


def test_convergence_out_file(tmp_path, capsys):
    path = tmp_path / "rates.csv"
    code, out, _ = _run(capsys, "convergence", "--levels", "1..2", "--format", "csv", "--out", str(path))
    assert code == 0
    assert path.read_text().count("\n") >= 3
    assert "P1-P1/P0" in out


def test_config_file_and_flag_precedence(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nfamily = poly\nk = 2\nlevel = 1\nmode = sf\n")
    code, out, _ = _run(capsys, "solve", "--config", str(ini), "--k", "1")
    assert code == 0
    assert "# family = poly" in out
    assert "# k = 1" in out
    assert "# r = 4" in out
    assert _fields(out)["cells"] == str(build_mesh("poly", 1).n_cells)


def test_solve_reports_small_residual(capsys):
    code, out, _ = _run(capsys, "solve", "--k", "1", "--level", "3")
    assert code == 0
    f = _fields(out)
    assert float(f["residual"]) <= 1e-10
    assert float(f["max div_w u_h"]) <= 1e-9
    assert int(f["unknowns"]) == build_dofmap(build_mesh("tri", 3), 1).size


def test_zero_rhs_errors_are_norms_of_the_exact_solution(capsys):
    code, out, _ = _run(capsys, "solve", "--k", "1", "--level", "2", "--zero-rhs")
    assert code == 0
    f = _fields(out)
    # u_h = 0 and p_h = 0, so the errors are ||Q0 u|| and ||p||
    # with ||(x - 1/2)^3||^2 = 1/448 on the unit square
    assert float(f["l2_pressure"]) == pytest.approx(math.sqrt(1 / 448), rel=1e-6)
    dm = build_dofmap(build_mesh("tri", 2), 1)
    ref = projected_solution(brinkman_2d_case(), dm)
    total = 0.0
    for c in range(dm.mesh.n_cells):
        geom = CellGeometry.of_cell(dm.mesh, c)
        q = geom.quadrature(4)
        u0 = ref.u0[c] @ geom.cell_basis(1).values(q.points)
        total += float(np.sum(q.weights * (u0**2).sum(0)))
    assert float(f["l2_velocity"]) == pytest.approx(math.sqrt(total), rel=1e-6)


def test_dumps(tmp_path, capsys):
    sol, mat = tmp_path / "u.txt", tmp_path / "K.txt"
    code, _, _ = _run(capsys, "solve", "--level", "1", "--dump", str(sol), "--dump-system", str(mat))
    assert code == 0
    assert sol.read_text().startswith("# k=1 cells=8")
    assert mat.stat().st_size > 0


def test_numpy_flag(capsys):
    from wgbrinkman import _kernels

    try:
        code, out, _ = _run(capsys, "--numpy", "solve", "--level", "1")
        assert code == 0 and _kernels.backend_name() == "numpy"
    finally:
        _kernels.set_backend(True)


def test_numerical_failure_exits_1(monkeypatch, capsys):
    def boom(*a, **kw):
        raise RuntimeError("factorization failed")

    monkeypatch.setattr(C, "solve", boom)
    code, _, err = _run(capsys, "solve", "--level", "1")
    assert code == 1
    assert "solve failed" in err


def test_failed_study_exits_1(monkeypatch, capsys):
    import wgbrinkman.verify as V

    monkeypatch.setattr(V, "solve", lambda *a, **kw: (_ for _ in ()).throw(RuntimeError("singular")))
    code, _, err = _run(capsys, "convergence", "--levels", "1..2")
    assert code == 1
    assert "level 1" in err


def _table_rates(out):
    last = [ln for ln in out.splitlines() if ln.strip()][-1]
    cols = [c.split() for c in last.split("|")[1:]]
    return tuple(float(c[1]) for c in cols)


@pytest.mark.slow
def test_tri_k1_table_rates(capsys):
    code, out, _ = _run(capsys, "convergence", "--family", "tri", "--k", "1", "--levels", "4..6")
    assert code == 0
    assert _table_rates(out) == pytest.approx((2.0, 1.0, 1.0), abs=0.1)


@pytest.mark.slow
def test_tri_k2_csv_is_deterministic(capsys):
    argv = ["convergence", "--family", "tri", "--k", "2", "--levels", "4..6", "--format", "csv"]
    code, out, _ = _run(capsys, *argv)
    assert code == 0
    data = [ln for ln in out.splitlines() if ln and not ln.startswith("#")][1:]
    assert len(data) == 3 and all(len(row.split(",")) == 8 for row in data)
    _, again, _ = _run(capsys, *argv)
    assert again == out


@pytest.mark.slow
def test_poly_k1_stabilizer_free_rates(capsys):
    code, out, _ = _run(
        capsys, "convergence", "--family", "poly", "--k", "1", "--mode", "stabilizer-free", "--levels", "4..6"
    )
    assert code == 0
    assert _table_rates(out) == pytest.approx((2.0, 1.0, 1.0), abs=0.25)
