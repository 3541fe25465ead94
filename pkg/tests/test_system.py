import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoupled_feec.fespaces import build_space, diagonal_inner, mass_matrix
from decoupled_feec.harness import make_case
from decoupled_feec.mesh import box_mesh
from decoupled_feec.system import (MethodSpaces, SolverConfig, apply_local, assemble, assemble_stokes_b,
                                   infsup_probe, l2_norm, load_vector, solve_fourth_order,
                                   solve_generalized_stokes, solve_mixed_darcy, solve_spd)


def dense_saddle(blocks, rhs):
    return np.linalg.solve(np.block(blocks), rhs)


@pytest.mark.parametrize("d, j", [(2, 1), (3, 1)])
def test_eliminated_mixed_solve_matches_dense_saddle(d, j):
    mesh = box_mesh(d, 2)
    x_space = build_space("trimmed", 2, j, mesh, True)
    y_space = build_space("trimmed", 2, j - 1, mesh, True)
    rng = np.random.default_rng(0)
    F, g = rng.standard_normal(x_space.ndofs), rng.standard_normal(y_space.ndofs)
    res = solve_mixed_darcy(x_space, y_space, F, SolverConfig(), multiplier_load=g)
    K = assemble("dd", x_space).matrix.toarray()
    G = assemble("d_pair", x_space, y_space).matrix.toarray()
    D = np.diag(diagonal_inner(y_space).weights)
    ref = dense_saddle([[K, G], [G.T, -D]], np.concatenate([F, g]))
    assert np.allclose(res.primal, ref[:x_space.ndofs], atol=1e-10)
    assert np.allclose(res.multiplier, ref[x_space.ndofs:], atol=1e-10)


def test_mixed_solve_iterative_matches_direct():
    mesh = box_mesh(3, 2)
    x_space = build_space("trimmed", 2, 1, mesh, True)
    y_space = build_space("trimmed", 2, 0, mesh, True)
    F = np.random.default_rng(1).standard_normal(x_space.ndofs)
    a = solve_mixed_darcy(x_space, y_space, F, SolverConfig(solver="direct"))
    b = solve_mixed_darcy(x_space, y_space, F, SolverConfig(solver="iterative"))
    assert b.info.method == "cg"
    assert np.allclose(a.primal, b.primal, atol=1e-8 * np.abs(a.primal).max())


def stokes_reference(phi, p, r, w_space, w):
    A = assemble("grad", phi).matrix.toarray()
    B1, B2 = (M.toarray() for M in assemble_stokes_b(phi, p, r))
    Dr = np.diag(diagonal_inner(r).weights)
    F = apply_local(phi, w_space, ("id", "d"), w)
    n1, n2, n3 = phi.ndofs, r.ndofs, p.ndofs
    Z = np.zeros
    sol = dense_saddle([[A, Z((n1, n2)), B1.T], [Z((n2, n1)), Dr, B2.T], [B1, B2, Z((n3, n3))]],
                       np.concatenate([F, Z(n2 + n3)]))
    return sol[:n1], sol[n1 + n2:], sol[n1:n1 + n2]


@pytest.mark.parametrize("d, j, n", [(2, 0, 3), (3, 0, 2), (3, 1, 2)])
def test_condensed_stokes_matches_dense_saddle(d, j, n):
    mesh = box_mesh(d, n)
    S = MethodSpaces.build(mesh, 1, j)
    w = np.random.default_rng(2).standard_normal(S.w.ndofs)
    res = solve_generalized_stokes(S.phi, S.p, S.r, S.w, w, SolverConfig())
    phi, p, r = stokes_reference(S.phi, S.p, S.r, S.w, w)
    assert np.allclose(res.phi, phi, atol=1e-10)
    assert np.allclose(res.p, p, atol=1e-10)
    assert np.allclose(res.r, r, atol=1e-10)


def test_minres_matches_direct():
    mesh = box_mesh(3, 3)
    S = MethodSpaces.build(mesh, 1, 0)
    w = np.random.default_rng(3).standard_normal(S.w.ndofs)
    a = solve_generalized_stokes(S.phi, S.p, S.r, S.w, w, SolverConfig(solver="direct"))
    b = solve_generalized_stokes(S.phi, S.p, S.r, S.w, w, SolverConfig(solver="iterative"))
    assert b.info.method == "minres"
    assert np.linalg.norm(a.phi - b.phi) <= 1e-7 * np.linalg.norm(a.phi)


@pytest.mark.parametrize("d", [2, 3])
def test_top_index_poisson_is_mean_zero_and_matches_bordered_system(d):
    mesh = box_mesh(d, 2)
    S = MethodSpaces.build(mesh, 1, d - 1)
    assert S.p.is_zero and S.r.is_zero
    w = np.random.default_rng(4).standard_normal(S.w.ndofs)
    res = solve_generalized_stokes(S.phi, S.p, S.r, S.w, w, SolverConfig())
    A = assemble("grad", S.phi).matrix.toarray()
    F = apply_local(S.phi, S.w, ("id", "d"), w)
    m = np.zeros(S.phi.ndofs)
    for cls, cells in S.phi.class_cells():
        loc = S.phi.local_basis(cls).integrate()[:, 0]
        np.add.at(m, S.phi.cell_dofs[cells], np.broadcast_to(loc, S.phi.cell_dofs[cells].shape))
    ref = dense_saddle([[A, m[:, None]], [m[None, :], np.zeros((1, 1))]], np.concatenate([F, [0.0]]))
    assert np.allclose(res.phi, ref[:-1], atol=1e-10)
    assert abs(m @ res.phi) < 1e-12


def test_lumped_and_full_multiplier_mass_agree():
    case = make_case("biharmonic", 2)
    mesh = box_mesh(2, 4)
    a = solve_fourth_order(mesh, 1, 0, case.f, case.g, SolverConfig())
    b = solve_fourth_order(mesh, 1, 0, case.f, case.g, SolverConfig(eliminate=False, multiplier_mass="full"))
    for name in ("w", "phi", "u"):
        x, y = getattr(a, name), getattr(b, name)
        assert np.linalg.norm(x - y) <= 1e-10 * np.linalg.norm(x)


def test_load_vector_of_constant_is_mass_times_ones():
    mesh = box_mesh(3, 2)
    space = build_space("full", 1, 0, mesh)
    F = load_vector(space, lambda x: np.ones((x.shape[0], 1)))
    assert np.allclose(F, mass_matrix(space) @ np.ones(space.ndofs))


def test_load_vector_of_linear_field_is_exact():
    mesh = box_mesh(2, 3)
    space = build_space("full", 1, 0, mesh)
    F = load_vector(space, lambda x: (2 * x[:, 0] - x[:, 1])[:, None], degree=2)
    interp = 2 * mesh.vertices[:, 0] - mesh.vertices[:, 1]
    assert np.allclose(F, mass_matrix(space) @ interp)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_apply_local_matches_assembled_matrix(seed):
    mesh = box_mesh(2, 2)
    u = build_space("trimmed", 2, 1, mesh, True)
    phi = build_space("phi", 1, 1, mesh, True)
    v = np.random.default_rng(seed).standard_normal(phi.ndofs)
    M = assemble("d_pair", phi, u).matrix  # (phi, d chi)
    assert np.allclose(apply_local(u, phi, ("d", "id"), v), M.T @ v)


def test_l2_norm_matches_mass_matrix():
    mesh = box_mesh(3, 2)
    space = build_space("trimmed", 2, 1, mesh, True)
    v = np.random.default_rng(5).standard_normal(space.ndofs)
    assert l2_norm(space, v) == pytest.approx(np.sqrt(v @ (mass_matrix(space) @ v)))


def test_solve_spd_direct_and_cg_agree():
    mesh = box_mesh(2, 6)
    space = build_space("full", 1, 0, mesh, True)
    A = assemble("dd", space).matrix
    b = np.ones(space.ndofs)
    x1, _ = solve_spd(A, b, SolverConfig(solver="direct"))
    x2, info = solve_spd(A, b, SolverConfig(solver="iterative"))
    assert info.method == "cg" and info.residual < 1e-9
    assert np.allclose(x1, x2, atol=1e-9)


@pytest.mark.parametrize("d, j", [(2, 0), (2, 1), (3, 0), (3, 1), (3, 2)])
def test_zero_data_gives_zero_solution(d, j):
    sol = solve_fourth_order(box_mesh(d, 2), 1, j, None, None)
    for name in ("w", "lam", "phi", "p", "r", "u", "z"):
        assert not np.any(getattr(sol, name))
    assert sol.multiplier_ratio == 0.0


def test_multipliers_vanish_for_divergence_free_data():
    case = make_case("quadcurl", 3)
    sol = solve_fourth_order(box_mesh(3, 2), 1, 1, case.f, case.g)
    assert sol.multipliers_vanish(1e-6)


def test_infsup_constants_positive_and_stable():
    levels = infsup_probe([box_mesh(2, n) for n in (1, 2, 4)], j=0)
    betas = [lv.beta for lv in levels]
    assert all(b > 0 for b in betas)
    assert betas[-1] >= 0.5 * betas[0]


def test_infsup_not_applicable_for_top_index():
    (lv,) = infsup_probe([box_mesh(3, 1)], j=2)
    assert not lv.applicable and lv.beta is None


def test_infsup_size_cap():
    with pytest.raises(MemoryError):
        infsup_probe([box_mesh(3, 2)], j=0, max_size=10)


@pytest.mark.parametrize("kwargs", [
    {"rtol": 0.0}, {"rtol": 1e-2}, {"solver": "magic"}, {"multiplier_mass": "full"},
    {"multiplier_mass": "lumpy", "eliminate": False},
])
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_method_spaces_reject_top_degree():
    with pytest.raises(ValueError):
        MethodSpaces.build(box_mesh(2, 1), 1, 2)
