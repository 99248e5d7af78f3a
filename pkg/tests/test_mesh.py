import numpy as np
import pytest

from nsfrac.mesh import (BOTTOM, LEFT, RIGHT, TOP, boundary_vertices,
                         build_rectangle, cell_areas, mesh_from_arrays,
                         mesh_size_h, write_vtk)
from nsfrac.problems import cavity_stretch, channel_stretch


def test_minimal_grid():
    m = build_rectangle(0, 0, 1, 1, 1, 1)
    assert m.num_cells == 2
    assert m.num_vertices == 4
    assert np.all(cell_areas(m) > 0)


def test_cell_area_sum_matches_domain():
    m = build_rectangle(0, 0, 2, 2, 7, 5)
    assert cell_areas(m).sum() == pytest.approx(4.0, rel=1e-12)
    m2 = build_rectangle(-1, 0.5, 3, 2.5, 4, 9)
    assert cell_areas(m2).sum() == pytest.approx(8.0, rel=1e-12)


def test_cells_counterclockwise():
    m = build_rectangle(0, 0, 1, 1, 4, 3)
    assert np.all(cell_areas(m) > 0)


def test_interior_edges_shared_by_two_cells():
    m = build_rectangle(0, 0, 1, 1, 3, 3)
    edges = np.concatenate([m.cells[:, [0, 1]], m.cells[:, [1, 2]], m.cells[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, counts = np.unique(key, axis=0, return_counts=True)
    assert set(counts) <= {1, 2}
    boundary_key = {tuple(sorted(f)) for f in m.boundary_facets.tolist()}
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    for edge, count in zip(uniq.tolist(), counts):
        assert (count == 1) == (tuple(edge) in boundary_key)


def test_boundary_facets_belong_to_one_cell():
    m = build_rectangle(0, 0, 1, 1, 4, 4)
    edges = np.concatenate([m.cells[:, [0, 1]], m.cells[:, [1, 2]], m.cells[:, [2, 0]]])
    key = {tuple(e) for e in np.sort(edges, axis=1).tolist()}
    counts = {}
    for e in np.sort(edges, axis=1).tolist():
        counts[tuple(e)] = counts.get(tuple(e), 0) + 1
    for facet in np.sort(m.boundary_facets, axis=1).tolist():
        assert counts[tuple(facet)] == 1


def test_mesh_size_table_values():
    # matches the tabulated mesh sizes for the [0, 2]^2 grid
    m = build_rectangle(0, 0, 2, 2, 10, 10)
    assert mesh_size_h(m) == pytest.approx(2 * np.sqrt(2) / 10, rel=1e-12)
    assert mesh_size_h(m) == pytest.approx(2.83e-01, rel=5e-3)
    m50 = build_rectangle(0, 0, 2, 2, 50, 50)
    assert mesh_size_h(m50) == pytest.approx(5.66e-02, rel=5e-3)


def test_mesh_size_single_right_triangle():
    tri = mesh_from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert mesh_size_h(tri) == pytest.approx(np.sqrt(2), rel=1e-14)


def test_mesh_size_halves_on_refinement():
    h1 = mesh_size_h(build_rectangle(0, 0, 1, 3, 4, 6))
    h2 = mesh_size_h(build_rectangle(0, 0, 1, 3, 8, 12))
    assert h1 / h2 == pytest.approx(2.0, rel=1e-12)


def test_periodic_pairs_bijection():
    m = build_rectangle(0, 0, 2, 2, 5, 5, periodic_x=True, periodic_y=True)
    for direction, (slaves, masters) in m.periodic_pairs.items():
        assert len(np.unique(slaves)) == len(slaves)
        assert len(np.unique(masters)) == len(masters)
        tang = 1 if direction == "x" else 0
        assert np.allclose(m.vertices[slaves, tang], m.vertices[masters, tang],
                           atol=1e-12 * 2)


def test_periodic_sides_have_no_boundary_facets():
    m = build_rectangle(0, 0, 2, 2, 4, 4, periodic_x=True, periodic_y=True)
    assert len(m.boundary_facets) == 0
    mx = build_rectangle(0, 0, 2, 2, 4, 4, periodic_x=True)
    assert set(mx.facet_markers.tolist()) == {BOTTOM, TOP}


def test_boundary_vertices_predicates():
    m = build_rectangle(0, 0, 1, 1, 6, 6)
    top = boundary_vertices(m, lambda x, y: np.abs(y - 1) < 1e-8)
    assert len(top) == 7
    empty = boundary_vertices(m, lambda x, y: np.zeros_like(x, dtype=bool))
    assert len(empty) == 0
    # cavity wall predicate keeps bottom and sides including top corners
    walls = boundary_vertices(m, lambda x, y: np.abs(x * y * (1 - x)) < 1e-8)
    coords = m.vertices[walls]
    assert len(walls) == 6 + 6 + 7  # left + right (sans bottom corners) + bottom
    corner_ids = [np.flatnonzero((m.vertices[:, 0] == cx) & (m.vertices[:, 1] == 1.0))[0]
                  for cx in (0.0, 1.0)]
    assert set(corner_ids) <= set(walls.tolist())
    assert not np.any((coords[:, 1] == 1.0) & (coords[:, 0] > 0) & (coords[:, 0] < 1))


def test_cavity_transform_fixes_anchor_points():
    assert cavity_stretch(0.0) == pytest.approx(0.0, abs=1e-15)
    assert cavity_stretch(0.5) == pytest.approx(0.5, abs=1e-15)
    assert cavity_stretch(1.0) == pytest.approx(1.0, abs=1e-15)


def test_channel_transform_fixes_walls_and_centerline():
    assert channel_stretch(-1.0) == pytest.approx(-1.0, abs=1e-15)
    assert channel_stretch(0.0) == pytest.approx(0.0, abs=1e-15)
    assert channel_stretch(1.0) == pytest.approx(1.0, abs=1e-15)


def test_transform_applied_after_periodic_pairing():
    def stretch(pts):
        pts[:, 1] = channel_stretch(pts[:, 1])
        return pts

    m = build_rectangle(0, -1, 2 * np.pi, 1, 4, 8, periodic_x=True, transform=stretch)
    slaves, masters = m.periodic_pairs["x"]
    assert np.allclose(m.vertices[slaves, 1], m.vertices[masters, 1], atol=1e-14)
    assert np.all(cell_areas(m) > 0)


def test_degenerate_transform_reports_cell():
    with pytest.raises(ValueError, match="cell"):
        build_rectangle(0, 0, 1, 1, 2, 2, transform=lambda p: 0.0 * p)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        build_rectangle(0, 0, 1, 1, 0, 1)
    with pytest.raises(ValueError):
        build_rectangle(1, 0, 0, 1, 2, 2)


def test_mesh_from_arrays_rejects_clockwise():
    with pytest.raises(ValueError, match="counterclockwise"):
        mesh_from_arrays([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]])


def test_vtk_dump(tmp_path):
    m = build_rectangle(0, 0, 1, 1, 2, 2)
    path = tmp_path / "mesh.vtk"
    write_vtk(m, path)
    text = path.read_text()
    assert "POINTS 9 double" in text
    assert "CELLS 8 32" in text
