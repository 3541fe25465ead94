import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from decoupled_feec.fespaces import (build_space, derivative_matrix, diagonal_inner,
                                     exactness_audit, mass_matrix)
from decoupled_feec.mesh import box_mesh


@pytest.fixture(scope="module")
def cube2():
    return box_mesh(3, 2)


def null_dim(M):
    A = M.toarray()
    if A.shape[1] == 0:
        return 0
    return sla.null_space(A, rcond=1e-10).shape[1]


def test_lagrange_with_bc_keeps_interior_vertex(cube2):
    assert build_space("full", 1, 0, cube2, True).ndofs == 1


def test_edge_space_counts_edges():
    m = box_mesh(3, 1)
    assert build_space("trimmed", 1, 1, m).ndofs == 19


def test_phi_counts_vertices_and_bubbles(cube2):
    # one interior vertex with three components plus three bubbles per cell
    assert build_space("phi", 1, 0, cube2, True).ndofs == 3 + 3 * cube2.num_cells


@pytest.mark.parametrize("kind, k, j, expected", [
    ("full", 1, 1, lambda m: 2 * len(m.faces(1))),
    ("trimmed", 2, 1, lambda m: 2 * len(m.faces(1)) + 2 * len(m.faces(2))),
    ("trimmed", 1, 2, lambda m: len(m.faces(2))),
    ("star_trimmed", 1, 3, lambda m: m.num_vertices),
    ("star_trimmed", 1, 0, lambda m: m.num_cells),
])
def test_dimensions_without_bc(cube2, kind, k, j, expected):
    assert build_space(kind, k, j, cube2).ndofs == expected(cube2)


def test_curl_kernel_is_gradients_of_interior_vertices(cube2):
    edges = build_space("trimmed", 1, 1, cube2, True)
    faces = build_space("trimmed", 1, 2, cube2, True)
    curl = derivative_matrix(edges, faces)
    interior_vertices = len(cube2.subsimplices(0).interior)
    assert null_dim(curl) == interior_vertices == 1


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("k", [1, 2])
def test_exactness_on_single_cube(d, k):
    m = box_mesh(d, 1)
    for j in range(d + 1):
        rep = exactness_audit(m, k, j)
        assert rep.ok, [(c.name, c.kernel_dim, c.image_rank) for c in rep.checks]


def test_exactness_ranks_match_dense_linear_algebra(cube2):
    rep = exactness_audit(cube2, 1, 1)
    check = [c for c in rep.checks if c.name == "trimmed"][0]
    prev = build_space("trimmed", 1, 0, cube2, True)
    trim = build_space("trimmed", 1, 1, cube2, True)
    nxt = build_space("trimmed", 1, 2, cube2, True)
    assert check.kernel_dim == null_dim(derivative_matrix(trim, nxt))
    assert check.image_rank == np.linalg.matrix_rank(derivative_matrix(prev, trim).toarray())


@settings(max_examples=8, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(0, 1), st.booleans())
def test_d_composed_with_d_vanishes(d, j, bc):
    m = box_mesh(d, 2)
    a = build_space("trimmed", 1, j, m, bc)
    b = build_space("trimmed", 1, j + 1, m, bc)
    c = build_space("trimmed", 1, j + 2, m, bc)
    D = derivative_matrix(b, c) @ derivative_matrix(a, b)
    assert D.nnz == 0 or abs(D).max() == 0


@pytest.mark.parametrize("kind, k, j", [("full", 1, 0), ("trimmed", 2, 1), ("phi", 1, 0), ("star_trimmed", 1, 2)])
def test_mass_matrix_spd(cube2, kind, k, j):
    M = mass_matrix(build_space(kind, k, j, cube2)).toarray()
    assert np.allclose(M, M.T, atol=1e-14)
    assert np.linalg.eigvalsh(M).min() > 0


def test_partition_of_unity_mass():
    m = box_mesh(2, 3)
    M = mass_matrix(build_space("full", 1, 0, m))
    one = np.ones(M.shape[0])
    assert one @ M @ one == pytest.approx(1.0)


def test_diagonal_inner_is_mass_diagonal(cube2):
    space = build_space("trimmed", 2, 0, cube2, True)
    D = diagonal_inner(space)
    assert np.allclose(D.weights, mass_matrix(space).diagonal())
    v = np.arange(space.ndofs, dtype=float)
    assert D(v, v) == pytest.approx(D.norm(v) ** 2)


def test_real_and_zero_spaces(cube2):
    r = build_space("star_trimmed", 1, 4, cube2)
    assert r.is_real_line and r.ndofs == 1
    assert diagonal_inner(r).weights[0] == pytest.approx(cube2.volume)
    z = build_space("trimmed", 1, -1, cube2, True)
    assert z.is_zero and z.ndofs == 0
    assert build_space("star_trimmed", 1, 5, cube2).is_zero


def test_interior_dofs_numbered_last(cube2):
    phi = build_space("phi", 1, 1, cube2, True)
    inner = phi.cell_dofs[:, phi.interior_local]
    assert inner.min() == phi.interior_offset
    assert np.array_equal(np.sort(inner.ravel()), np.arange(phi.interior_offset, phi.ndofs))


def test_mean_constraint_only_for_top_index(cube2):
    assert build_space("phi", 1, 2, cube2, True).mean_constraint
    assert not build_space("phi", 1, 1, cube2, True).mean_constraint


@pytest.mark.parametrize("args", [
    ("phi", 1, 3), ("star_trimmed", 1, 2, True), ("nope", 1, 0), ("full", 0, 0),
])
def test_invalid_requests(cube2, args):
    kind, k, j, *bc = args
    with pytest.raises(ValueError):
        build_space(kind, k, j, cube2, *bc)
