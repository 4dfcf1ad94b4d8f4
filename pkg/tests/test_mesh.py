import math

import numpy as np
import pytest

from wgbrinkman.mesh import (
    FAMILIES,
    Mesh2D,
    build_mesh,
    derive_edges,
    mesh_metrics,
    polygon_area,
    read_mesh,
    unit_square_mesh,
    validate_mesh,
    write_mesh,
)


def _reflex_count(xy):
    n = len(xy)
    out = 0
    for j in range(n):
        a, b, c = xy[j - 1], xy[j], xy[(j + 1) % n]
        u, w = b - a, c - b
        if u[0] * w[1] - u[1] * w[0] < 0:
            out += 1
    return out


@pytest.mark.parametrize("family", sorted(FAMILIES))
@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_families_are_valid(family, level):
    assert validate_mesh(build_mesh(family, level)) == []


@pytest.mark.parametrize("family", sorted(FAMILIES))
@pytest.mark.parametrize("level", [1, 3])
def test_euler_characteristic(family, level):
    # a tiling of a disc: V - E + F = 1
    m = build_mesh(family, level)
    assert len(m.vertices) - m.n_edges + m.n_cells == 1


@pytest.mark.parametrize("level", [1, 2, 5])
def test_triangle_family_counts(level):
    n = 2**level
    m = build_mesh("tri", level)
    h, min_edge, nc, ne = mesh_metrics(m)
    assert nc == 2 * n * n
    assert ne == 2 * n * (n + 1) + n * n
    assert len(m.boundary_edges) == 4 * n
    assert h == pytest.approx(math.sqrt(2) / n, rel=1e-14)
    assert min_edge == pytest.approx(1 / n, rel=1e-14)


@pytest.mark.parametrize("level", [1, 2, 4])
def test_polygon_family_counts(level):
    n = 2**level
    m = build_mesh("poly", level)
    h, _, nc, ne = mesh_metrics(m)
    assert nc == 2 * n * n
    assert ne == 3 * n * n + 3 * n * (n + 1)
    # every square boundary side is cut in two at the top and bottom only
    assert len(m.boundary_edges) == 2 * n + 2 * 2 * n
    assert h == pytest.approx(math.sqrt(1.25) / n, rel=1e-14)


def test_polygon_cells_are_nonconvex_hexagons():
    m = build_mesh("poly", 2)
    for c in range(m.n_cells):
        xy = m.cell_vertices(c)
        assert len(xy) == 6
        assert _reflex_count(xy) == 1
        assert m.cell_area(c) == pytest.approx(0.5 / 16, rel=1e-13)


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_interior_edges_have_opposite_orientation(family):
    m = build_mesh(family, 2)
    for e in range(m.n_edges):
        c0, c1 = m.edge_cells[e]
        if c1 < 0:
            continue
        s0 = m.cell_edge_signs[c0][list(m.cell_edges[c0]).index(e)]
        s1 = m.cell_edge_signs[c1][list(m.cell_edges[c1]).index(e)]
        assert s0 == -s1


def test_edges_sorted_low_high():
    m = build_mesh("poly", 2)
    assert np.all(m.edges[:, 0] < m.edges[:, 1])
    keys = m.edges[:, 0] * len(m.vertices) + m.edges[:, 1]
    assert np.all(np.diff(keys) > 0)


def test_mesh_is_immutable():
    m = build_mesh("tri", 1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0
    with pytest.raises(AttributeError):
        m.level = 4


def test_derive_edges_rejects_three_cells_on_an_edge():
    with pytest.raises(ValueError):
        derive_edges([(0, 1, 2), (1, 0, 3), (0, 1, 4)])


def test_validate_flags_clockwise_cell():
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    m = Mesh2D(v, [(0, 3, 2, 1)])
    assert any("negative area" in p for p in validate_mesh(m))


def test_validate_flags_self_intersection():
    # bow-tie loop over the unit square corners
    v = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    probs = validate_mesh(Mesh2D(v, [(0, 1, 2, 3)]))
    assert any("self-intersection" in p or "negative area" in p for p in probs)


def test_validate_flags_gap():
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    probs = validate_mesh(Mesh2D(v, [(0, 1, 2)]))
    assert any("tile" in p for p in probs)


def test_validate_flags_degenerate_edge():
    v = np.array([[0, 0], [1, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    probs = validate_mesh(Mesh2D(v, [(0, 1, 2, 3, 4)]))
    assert any("degenerate edge" in p for p in probs)


def test_validate_flags_inconsistent_orientation():
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    # second triangle is clockwise, so the shared edge is traversed the same way twice
    m = Mesh2D(v, [(0, 1, 2), (0, 3, 2)])
    probs = validate_mesh(m)
    assert any("orientation" in p for p in probs)


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_text_round_trip(tmp_path, family):
    m = build_mesh(family, 2)
    path = tmp_path / "m.txt"
    write_mesh(m, path)
    assert path.read_text().splitlines()[0] == "wgmesh 2d"
    back = read_mesh(path, level=2)
    assert np.array_equal(back.vertices, m.vertices)
    assert back.cells == m.cells
    assert np.array_equal(back.edges, m.edges)


def test_read_rejects_other_formats(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("mesh 3d\n0\n0\n")
    with pytest.raises(ValueError):
        read_mesh(p)


def test_unknown_family():
    with pytest.raises(ValueError):
        build_mesh("quad", 2)


def test_unit_square_single_cell():
    m = unit_square_mesh()
    assert m.n_cells == 1 and m.n_edges == 4
    assert polygon_area(m.cell_vertices(0)) == 1.0
    assert validate_mesh(m) == []
