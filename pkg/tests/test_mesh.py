from math import factorial, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoupled_feec.mesh import (CellGeometry, SimplicialMesh, box_mesh, mesh_size, refine_uniform,
                                 subsimplices)


def test_unit_cube_counts():
    m = box_mesh(3, 1)
    assert [len(m.faces(ell)) for ell in range(4)] == [8, 19, 18, 6]
    assert m.euler_characteristic() == 1
    assert m.num_classes == 6


def test_square_counts():
    m = box_mesh(2, 2)
    assert m.num_vertices == 9
    assert m.num_cells == 8


@pytest.mark.parametrize("d, n", [(2, 1), (2, 3), (3, 1), (3, 2), (3, 4)])
def test_counts_match_closed_forms(d, n):
    m = box_mesh(d, n)
    assert m.num_vertices == (n + 1) ** d
    assert m.num_cells == factorial(d) * n ** d
    assert m.euler_characteristic() == 1
    assert len(m.subsimplices(0).interior) == (n - 1) ** d
    assert m.h == pytest.approx(mesh_size(d, n))


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(1, 4))
def test_cells_positive_and_tile_the_box(d, n):
    m = box_mesh(d, n)
    vols = m.signed_volumes()
    assert np.all(vols > 0)
    assert vols.sum() == pytest.approx(1.0)
    facet_use = np.bincount(m.cell_faces(d - 1).ravel())
    assert set(np.unique(facet_use)) <= {1, 2}
    assert (facet_use == 1).sum() == 2 * d * factorial(d - 1) * n ** (d - 1)


def test_vertex_numbering():
    m = box_mesh(3, 2)
    assert np.allclose(m.vertices[1], [0.5, 0, 0])
    assert np.allclose(m.vertices[3], [0, 0.5, 0])
    assert np.allclose(m.vertices[9], [0, 0, 0.5])


def test_all_cells_share_the_cube_diagonal():
    m = box_mesh(3, 1)
    for c in m.cells:
        assert 0 in c and 7 in c


def test_translation_classes():
    m = box_mesh(3, 3)
    assert m.num_classes == 6
    for cls in range(m.num_classes):
        cells = np.flatnonzero(m.cell_class == cls)
        P = m.vertices[m.cells_sorted[cells]]
        offsets = P - P[:, :1, :]
        assert np.allclose(offsets, offsets[0])


def test_cell_faces_follow_sorted_combinations():
    m = box_mesh(2, 1)
    for c in range(m.num_cells):
        verts = m.cells_sorted[c]
        edges = m.faces(1)[m.cell_faces(1)[c]]
        assert [tuple(e) for e in edges] == [(verts[0], verts[1]), (verts[0], verts[2]), (verts[1], verts[2])]


def test_boundary_flags():
    m = box_mesh(3, 2)
    x = m.vertices
    on_bdry = np.any((x == 0) | (x == 1), axis=1)
    assert np.array_equal(m.boundary_flags(0), on_bdry)
    edges = m.subsimplices(1)
    mid = x[edges.vertices].mean(axis=1)
    assert np.array_equal(edges.boundary, np.any((mid == 0) | (mid == 1), axis=1) &
                          np.all(on_bdry[edges.vertices], axis=1))


def test_subsimplex_incidence():
    m = box_mesh(3, 1)
    diag = subsimplices(m, 1)
    k = [i for i, e in enumerate(diag.vertices) if tuple(e) == (0, 7)][0]
    assert len(diag.incident_cells(k)) == 6


def test_geometry_round_trip():
    g = CellGeometry.from_vertices([[0, 0, 0], [1, 0, 0], [0, 2, 0], [0, 0, 3]])
    assert g.volume == pytest.approx(1.0)
    assert g.diameter == pytest.approx(sqrt(13))
    x = np.array([[0.1, 0.2, 0.3]])
    assert np.allclose(g.to_cartesian(g.to_barycentric(x)), x)
    assert np.allclose(g.grad_bary.sum(axis=0), 0)


def test_orientation_is_fixed_on_construction():
    cells = np.array([[0, 2, 1]])
    m = SimplicialMesh([[0, 0], [1, 0], [0, 1]], cells)
    assert m.signed_volumes()[0] > 0


def test_dump_load_round_trip(tmp_path):
    m = box_mesh(3, 2)
    path = tmp_path / "mesh.txt"
    m.dump(path)
    back = SimplicialMesh.load(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.cells, m.cells)


def test_refinement_halves_h():
    m = box_mesh(2, 3)
    assert refine_uniform(m).h == pytest.approx(m.h / 2)


@pytest.mark.parametrize("d, n", [(4, 1), (1, 2), (2, 0)])
def test_invalid_box(d, n):
    with pytest.raises(ValueError):
        box_mesh(d, n)


def test_degenerate_cell_rejected():
    with pytest.raises(ValueError):
        CellGeometry.from_vertices([[0, 0], [1, 1], [2, 2]])
