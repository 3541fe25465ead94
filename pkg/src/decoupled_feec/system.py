"""Assembly and solution of the decoupled discretization.

The fourth-order problem is solved in three stages:

1. a mixed problem for ``(w_h, lambda_h)``,
2. a generalized Stokes problem for ``(phi_h, p_h, r_h)`` driven by ``d w_h``,
3. a mixed problem for ``(u_h, z_h)`` driven by ``phi_h`` and ``g``.

The multipliers ``lambda_h``, ``r_h`` and ``z_h`` use the lumped inner product
``<.,.>_D`` so they can be eliminated cell by cell; the full-mass variant is
kept for comparison.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fespaces import FESpace, assemble_local, build_space, diagonal_inner, mass_matrix
from .mesh import SimplicialMesh
from .quadrature import simplex_rule


class SolverError(RuntimeError):
    """A linear solve failed to converge or the system is singular."""


@dataclass
class SolverConfig:
    """Linear solver settings.

    ``solver`` is ``auto`` (direct below ``direct_threshold`` unknowns, else
    iterative), ``direct``, or ``iterative`` (conjugate gradients for the SPD
    systems and MINRES for the Stokes block).  ``multiplier_mass`` selects the
    lumped (``diagonal``) or consistent (``full``) multiplier inner product
    when ``eliminate`` is off.  ``load_degree`` is the quadrature degree of
    the right-hand sides; by default it grows on coarse meshes because the
    multipliers vanish only when the discrete load is divergence free to
    rounding.
    """

    solver: str = "auto"
    rtol: float = 1e-10
    maxiter: int = 20000
    quad_degree: int = 10
    load_degree: int | None = None
    eliminate: bool = True
    multiplier_mass: str = "diagonal"
    direct_threshold: int = 20000
    tol_mult: float = 1e-6

    def __post_init__(self):
        if not 0 < self.rtol <= 1e-4:
            raise ValueError(f"rtol must lie in (0, 1e-4], got {self.rtol}")
        if self.solver not in ("auto", "direct", "iterative", "cg", "minres"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.multiplier_mass not in ("diagonal", "full"):
            raise ValueError(f"unknown multiplier mass {self.multiplier_mass!r}")
        if self.eliminate and self.multiplier_mass != "diagonal":
            raise ValueError("elimination requires the diagonal multiplier inner product")

    def load_degree_for(self, mesh):
        if self.load_degree is not None:
            return self.load_degree
        if mesh.n is None:
            return 20
        return int(max(14, 24 - 2 * np.log2(mesh.n)))

    def use_direct(self, n):
        if self.solver == "direct":
            return True
        if self.solver in ("iterative", "cg", "minres"):
            return False
        return n <= self.direct_threshold


@dataclass
class SolveInfo:
    method: str
    iterations: int = 0
    residual: float = 0.0
    seconds: float = 0.0
    size: int = 0


# ---------------------------------------------------------------------------
# assembly


KERNELS = {
    "mass": ("id", "id"),
    "dd": ("d", "d"),
    "d_pair": ("id", "d"),
    "codiff_pair": ("id", "delta"),
}


@dataclass
class BilinearBlock:
    """Sparse matrix of a bilinear form; rows index the test space."""

    kind: str
    test: FESpace
    trial: FESpace
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def shape(self):
        return self.matrix.shape


def _check_same_mesh(a: FESpace, b: FESpace):
    if a.mesh is not b.mesh:
        raise ValueError("spaces live on different meshes")


def local_matrix(kind, test: FESpace, trial: FESpace, cls):
    """Element matrix (test x trial) of ``kind`` on cell class ``cls``."""
    if kind == "grad":
        return test.local_basis(cls).gradient_inner(trial.local_basis(cls))
    if kind == "stokes_b":
        raise ValueError("stokes_b has two trial spaces; assemble its parts separately")
    t_op, s_op = KERNELS[kind]
    if trial.is_real_line and s_op == "id":
        raise ValueError("constant top forms enter only through their codifferential")
    return test.local_basis(cls, t_op).inner(trial.local_basis(cls, s_op))


def assemble_map(mesh, row_dofs, col_dofs, shape, local, rtol=1e-13):
    """Sum cell matrices ``local(cls)`` into a sparse matrix.

    ``row_dofs`` and ``col_dofs`` are ``(nc, n)`` global index arrays with
    unit signs; ``-1`` entries are skipped.  Entries below ``rtol`` times the element maximum are
    dropped.
    """
    rows, cols, vals = [], [], []
    labels = mesh.cell_class
    for cls in range(mesh.num_classes):
        cells = np.flatnonzero(labels == cls)
        if cells.size == 0:
            continue
        L = np.asarray(local(cls))
        if L.size == 0:
            continue
        scale = np.abs(L).max()
        a, b = np.nonzero(np.abs(L) > rtol * scale) if scale > 0 else (np.zeros(0, int), np.zeros(0, int))
        if a.size == 0:
            continue
        r = row_dofs[cells][:, a]
        c = col_dofs[cells][:, b]
        v = np.broadcast_to(L[a, b], r.shape)
        ok = (r >= 0) & (c >= 0)
        rows.append(r[ok].astype(np.int32))
        cols.append(c[ok].astype(np.int32))
        vals.append(v[ok])
    if not rows:
        return sp.csr_matrix(shape)
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=shape).tocsr()


def assemble(kind, test: FESpace, trial: FESpace | None = None) -> BilinearBlock:
    """Assemble ``mass``, ``dd``, ``grad``, ``d_pair`` (``(v, d eta)``) or
    ``codiff_pair`` (``(q, delta s)``) with exact polynomial integration."""
    trial = test if trial is None else trial
    _check_same_mesh(test, trial)
    shape = (test.ndofs, trial.ndofs)
    if test.is_zero or trial.is_zero:
        return BilinearBlock(kind, test, trial, sp.csr_matrix(shape))
    if kind == "mass" and test.is_real_line and trial.is_real_line:
        return BilinearBlock(kind, test, trial, mass_matrix(test))
    M = assemble_local(test, trial, lambda c: local_matrix(kind, test, trial, c))
    return BilinearBlock(kind, test, trial, M)


def assemble_stokes_b(phi: FESpace, p: FESpace, r: FESpace):
    """The two parts of ``(d psi + delta s, q)``: ``B1[q, psi]`` and ``B2[q, s]``."""
    return assemble("d_pair", p, phi).matrix, assemble("codiff_pair", p, r).matrix


# ---------------------------------------------------------------------------
# right-hand sides


def load_vector(space: FESpace, func, degree=10, chunk=20000):
    """``(func, v)`` for all basis functions ``v`` using a degree-``degree`` rule.

    ``func`` maps points ``(N, d)`` to component values ``(N, C(d, j))``.
    """
    if space.is_zero:
        return np.zeros(0)
    mesh = space.mesh
    rule = simplex_rule(mesh.d, degree)
    out = np.zeros(space.ndofs)
    for cls, cells in space.class_cells():
        phi = space.local_basis(cls).evaluate(rule.bary)  # (nloc, nq, ncomp)
        vol = mesh.class_geometry(cls).volume
        wphi = phi * (rule.weights[None, :, None] * vol)
        for s in range(0, cells.size, chunk):
            cc = cells[s:s + chunk]
            x = np.einsum("qv,cvd->cqd", rule.bary, mesh.vertices[mesh.cells_sorted[cc]])
            fv = np.asarray(func(x.reshape(-1, mesh.d)), dtype=float).reshape(cc.size, rule.num_points, -1)
            loc = np.einsum("cqk,aqk->ca", fv, wphi)
            idx = space.cell_dofs[cc]
            loc *= space.cell_signs[cc]
            ok = idx >= 0
            out += np.bincount(idx[ok], weights=loc[ok], minlength=space.ndofs)
    return out


def apply_local(test: FESpace, trial: FESpace, kind_ops, coeffs):
    """Matrix-free ``(op_t test, op_s trial) @ coeffs`` assembled into the test space."""
    t_op, s_op = kind_ops
    out = np.zeros(test.ndofs)
    if test.is_zero or trial.is_zero:
        return out
    for cls, cells in test.class_cells():
        L = test.local_basis(cls, t_op).inner(trial.local_basis(cls, s_op))
        idx_s = trial.cell_dofs[cells]
        vals = np.where(idx_s >= 0, coeffs[np.maximum(idx_s, 0)], 0.0) * trial.cell_signs[cells]
        loc = (vals @ L.T) * test.cell_signs[cells]
        idx_t = test.cell_dofs[cells]
        ok = idx_t >= 0
        out += np.bincount(idx_t[ok], weights=loc[ok], minlength=test.ndofs)
    return out


def cell_coefficients(space: FESpace, coeffs, cells):
    idx = space.cell_dofs[cells]
    return np.where(idx >= 0, np.asarray(coeffs)[np.maximum(idx, 0)], 0.0) * space.cell_signs[cells]


def l2_norm(space: FESpace, coeffs):
    """``L^2`` norm of a discrete function computed cellwise."""
    if space.is_zero:
        return 0.0
    if space.is_real_line:
        return float(abs(coeffs[0]) * np.sqrt(space.mesh.volume))
    total = 0.0
    for cls, cells in space.class_cells():
        B = space.local_basis(cls)
        M = B.inner(B)
        c = cell_coefficients(space, coeffs, cells)
        total += float(np.einsum("ca,ab,cb->", c, M, c))
    return float(np.sqrt(max(total, 0.0)))


# ---------------------------------------------------------------------------
# linear solvers


def solve_spd(A, b, cfg: SolverConfig, label="spd", diagonal=None, direct=None):
    """Sparse direct solve or Jacobi-preconditioned CG.

    ``A`` may be a ``LinearOperator`` on the iterative path; its diagonal is
    then passed as ``diagonal``.
    """
    n = A.shape[0]
    t0 = time.perf_counter()
    if n == 0:
        return np.zeros(0), SolveInfo("none", size=0)
    if not np.any(b):
        return np.zeros(n), SolveInfo("trivial", size=n)
    direct = cfg.use_direct(n) if direct is None else direct
    if direct:
        x = spla.spsolve(sp.csc_matrix(A), b, permc_spec="MMD_AT_PLUS_A")
        info = SolveInfo("direct", 0, 0.0, 0.0, n)
    else:
        dinv = 1.0 / (A.diagonal() if diagonal is None else diagonal)
        M = spla.LinearOperator(A.shape, matvec=lambda v: dinv * v, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        x, flag = spla.cg(A, b, rtol=cfg.rtol, atol=0.0, maxiter=cfg.maxiter, M=M, callback=cb)
        if flag != 0:
            raise SolverError(f"{label}: conjugate gradients did not converge (flag {flag})")
        info = SolveInfo("cg", count[0], 0.0, 0.0, n)
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{label}: non-finite solution")
    info.residual = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300))
    info.seconds = time.perf_counter() - t0
    return x, info


def _multiplier_matrix(space: FESpace, cfg: SolverConfig):
    if cfg.multiplier_mass == "full":
        return mass_matrix(space)
    return diagonal_inner(space).matrix().tocsr()


@dataclass
class MixedResult:
    primal: np.ndarray
    multiplier: np.ndarray
    info: SolveInfo


def solve_mixed(K, G, D_weights, F, g, cfg: SolverConfig, Dmat=None, label="mixed"):
    """Solve ``[K G; G^T -D][x; y] = [F; g]``.

    With elimination ``y = D^{-1}(G^T x - g)`` and
    ``(K + G D^{-1} G^T) x = F + G D^{-1} g`` is SPD.
    """
    n, m = G.shape
    g = np.zeros(m) if g is None else g
    if m == 0:
        x, info = solve_spd(K, F, cfg, label)
        return MixedResult(x, np.zeros(0), info)
    if cfg.eliminate:
        rhs = F + G @ (g / D_weights)
        # G D^{-1} G^T fills in badly for higher-order multipliers, so it is
        # formed only for small direct solves
        direct = cfg.use_direct(n) and (cfg.solver == "direct" or n <= cfg.direct_threshold // 4)
        if direct:
            A = (K + G @ sp.diags(1.0 / D_weights) @ G.T).tocsr()
            x, info = solve_spd(A, rhs, cfg, label, direct=True)
        else:
            A = spla.LinearOperator((n, n), dtype=float,
                                    matvec=lambda v: K @ v + G @ ((G.T @ v) / D_weights))
            diag = K.diagonal() + G.multiply(G) @ (1.0 / D_weights)
            x, info = solve_spd(A, rhs, cfg, label, diagonal=diag, direct=False)
        y = (G.T @ x - g) / D_weights
        return MixedResult(x, y, info)
    Dm = sp.diags(D_weights) if Dmat is None else Dmat
    S = sp.bmat([[K, G], [G.T, -Dm]], format="csc")
    rhs = np.concatenate([F, g])
    t0 = time.perf_counter()
    sol = spla.spsolve(S, rhs)
    res = float(np.linalg.norm(S @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return MixedResult(sol[:n], sol[n:], SolveInfo("direct-saddle", 0, res, time.perf_counter() - t0, n + m))


def solve_mixed_darcy(primal_space: FESpace, multiplier_space: FESpace, load, cfg: SolverConfig,
                      multiplier_load=None, step="first") -> MixedResult:
    """Mixed problem ``(dx, dv) + (v, dy) = load``, ``(x, d mu) - <y, mu> = multiplier_load``.

    ``step`` only labels diagnostics ("first" for ``w_h``, "third" for ``u_h``).
    """
    _check_same_mesh(primal_space, multiplier_space)
    K = assemble("dd", primal_space).matrix
    G = assemble("d_pair", primal_space, multiplier_space).matrix
    if multiplier_space.is_zero:
        D = np.zeros(0)
        Dmat = None
    else:
        D = diagonal_inner(multiplier_space).weights
        Dmat = _multiplier_matrix(multiplier_space, cfg) if not cfg.eliminate else None
    return solve_mixed(K, G, D, load, multiplier_load, cfg, Dmat, label=f"{step} mixed step")


# ---------------------------------------------------------------------------
# generalized Stokes problem


@dataclass
class StokesResult:
    phi: np.ndarray
    p: np.ndarray
    r: np.ndarray
    info: SolveInfo
    mean_multiplier: float = 0.0


def _phi_load_local(phi: FESpace, w_space: FESpace, w, cells, cls):
    """Cellwise ``(d w_h, psi)`` for the cells of one class, shape ``(nc, nloc)``."""
    if w_space.is_zero:
        return np.zeros((cells.size, phi.num_local))
    R = phi.local_basis(cls).inner(w_space.local_basis(cls, "d"))
    return cell_coefficients(w_space, w, cells) @ R.T


def _scatter(idx, vals, n):
    ok = idx >= 0
    return np.bincount(idx[ok], weights=vals[ok], minlength=n)


def _dof_components(space: FESpace):
    """Cartesian component carried by each shared DoF of a ``phi`` space."""
    comp = np.zeros(space.ndofs, dtype=np.int64)
    for a, (face, pat) in enumerate(space.keys):
        if len(face) == space.mesh.d + 1:
            continue
        idx = space.cell_dofs[:, a]
        comp[idx[idx >= 0]] = pat[2]
    return comp


@dataclass
class CondensedStokes:
    """Stokes system with cell-interior ``phi`` DoFs statically condensed."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    Cloc: sp.csr_matrix
    B2: sp.csr_matrix
    Dr: np.ndarray
    F: np.ndarray
    G: np.ndarray
    nshared: int
    recover: callable


def condense_stokes(phi: FESpace, p: FESpace, r: FESpace, w_space: FESpace, w) -> CondensedStokes:
    mesh = phi.mesh
    S_loc, I_loc = phi.shared_local, phi.interior_local
    ns = phi.interior_offset
    shared_map = phi.cell_dofs[:, S_loc]
    blocks = {}
    F = np.zeros(ns)
    G = np.zeros(p.ndofs)
    for cls, cells in phi.class_cells():
        B = phi.local_basis(cls)
        A = B.gradient_inner(B)
        B1 = p.local_basis(cls).inner(phi.local_basis(cls, "d"))  # (np, nphi)
        AII = A[np.ix_(I_loc, I_loc)]
        ASI = A[np.ix_(S_loc, I_loc)]
        ASS = A[np.ix_(S_loc, S_loc)]
        BS, BI = B1[:, S_loc], B1[:, I_loc]
        XA = np.linalg.solve(AII, ASI.T)  # A_II^{-1} A_IS
        XB = np.linalg.solve(AII, BI.T)  # A_II^{-1} B_I^T
        blocks[cls] = (ASS - ASI @ XA, BS - BI @ XA, BI @ XB, AII, ASI, BI)
        Fl = _phi_load_local(phi, w_space, w, cells, cls)
        FI = np.linalg.solve(AII, Fl[:, I_loc].T).T  # A_II^{-1} F_I per cell
        F += _scatter(shared_map[cells], Fl[:, S_loc] - FI @ ASI.T, ns)
        G += _scatter(p.cell_dofs[cells], -(FI @ BI.T), p.ndofs)
    Aprime = assemble_map(mesh, shared_map, shared_map, (ns, ns), lambda c: blocks[c][0])
    Bprime = assemble_map(mesh, p.cell_dofs, shared_map, (p.ndofs, ns), lambda c: blocks[c][1])
    Cloc = assemble_map(mesh, p.cell_dofs, p.cell_dofs, (p.ndofs, p.ndofs), lambda c: blocks[c][2])
    B2 = assemble("codiff_pair", p, r).matrix
    Dr = diagonal_inner(r).weights if not r.is_zero else np.zeros(0)

    def recover(phi_s, pv):
        full = np.zeros(phi.ndofs)
        full[:ns] = phi_s
        for cls, cells in phi.class_cells():
            _, _, _, AII, ASI, BI = blocks[cls]
            Fl = _phi_load_local(phi, w_space, w, cells, cls)
            xs = cell_coefficients(phi, full, cells)[:, S_loc]
            pc = cell_coefficients(p, pv, cells)
            rhs = Fl[:, I_loc] - xs @ ASI - pc @ BI
            xi = np.linalg.solve(AII, rhs.T).T
            full[phi.cell_dofs[cells][:, I_loc]] = xi
        return full

    return CondensedStokes(Aprime, Bprime, Cloc, B2, Dr, F, G, ns, recover)


def _woodbury_preconditioner(diag, B2, Dr):
    """Inverse of ``diag + B2 Dr^{-1} B2^T`` by the Woodbury identity."""
    dinv = 1.0 / diag
    if B2.shape[1] == 0:
        return lambda v: dinv * v
    inner = (sp.diags(Dr) + B2.T @ sp.diags(dinv) @ B2).tocsc()
    lu = spla.splu(inner)

    def apply(v):
        t = dinv * v
        return t - dinv * (B2 @ lu.solve(B2.T @ t))

    return apply


def _stokes_iterative(cs: CondensedStokes, phi: FESpace, p: FESpace, cfg: SolverConfig):
    import pyamg

    ns, npr = cs.nshared, cs.B.shape[0]
    A, B, Cl, B2, Dr = cs.A, cs.B, cs.Cloc, cs.B2, cs.Dr
    Drinv = 1.0 / Dr if Dr.size else Dr

    def C(v):
        out = Cl @ v
        if B2.shape[1]:
            out = out + B2 @ (Drinv * (B2.T @ v))
        return out

    def matvec(x):
        xs, xp = x[:ns], x[ns:]
        return np.concatenate([A @ xs + B.T @ xp, B @ xs - C(xp)])

    K = spla.LinearOperator((ns + npr, ns + npr), matvec=matvec, dtype=float)
    comp = _dof_components(phi)[:ns]
    ncomp = comb(phi.mesh.d, phi.form_degree)
    nullsp = np.zeros((ns, ncomp))
    nullsp[np.arange(ns), comp] = 1.0
    ml = pyamg.smoothed_aggregation_solver(A.tocsr(), B=nullsp, max_coarse=500)
    amg = ml.aspreconditioner(cycle="V")
    Mp = mass_matrix(p)
    pdiag = Mp.diagonal() + Cl.diagonal()
    papply = _woodbury_preconditioner(pdiag, B2, Dr)

    def prec(x):
        return np.concatenate([amg @ x[:ns], papply(x[ns:])])

    M = spla.LinearOperator(K.shape, matvec=prec, dtype=float)
    rhs = np.concatenate([cs.F, cs.G])
    count = [0]

    def cb(_):
        count[0] += 1

    x, flag = spla.minres(K, rhs, M=M, rtol=cfg.rtol, maxiter=cfg.maxiter, callback=cb)
    if flag != 0:
        raise SolverError(f"MINRES did not converge (flag {flag})")
    res = float(np.linalg.norm(matvec(x) - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return x, SolveInfo("minres", count[0], res, 0.0, ns + npr)


def _stokes_direct(cs: CondensedStokes):
    C = cs.Cloc
    if cs.B2.shape[1]:
        C = C + cs.B2 @ sp.diags(1.0 / cs.Dr) @ cs.B2.T
    S = sp.bmat([[cs.A, cs.B.T], [cs.B, -C]], format="csc")
    rhs = np.concatenate([cs.F, cs.G])
    x = spla.spsolve(S, rhs)
    res = float(np.linalg.norm(S @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return x, SolveInfo("direct", 0, res, 0.0, S.shape[0])


def _stokes_full_saddle(phi, p, r, w_space, w, cfg):
    """Uncondensed system with the multiplier mass chosen by ``cfg``."""
    A = assemble("grad", phi).matrix
    B1, B2 = assemble_stokes_b(phi, p, r)
    Mr = _multiplier_matrix(r, cfg) if not r.is_zero else sp.csr_matrix((0, 0))
    F = apply_local(phi, w_space, ("id", "d"), w)
    nphi, nr, npr = phi.ndofs, r.ndofs, p.ndofs
    Z = sp.csr_matrix((nphi, nr))
    S = sp.bmat([[A, Z, B1.T], [Z.T, Mr, B2.T], [B1, B2, None]], format="csc")
    rhs = np.concatenate([F, np.zeros(nr + npr)])
    t0 = time.perf_counter()
    x = spla.spsolve(S, rhs)
    res = float(np.linalg.norm(S @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
    info = SolveInfo("direct-saddle", 0, res, time.perf_counter() - t0, S.shape[0])
    return StokesResult(x[:nphi], x[nphi + nr:], x[nphi:nphi + nr], info)


def _poisson_mean_zero(phi: FESpace, w_space: FESpace, w, cfg: SolverConfig):
    """Top-degree branch: Poisson problem on ``Phi_h`` with zero mean."""
    A = assemble("grad", phi).matrix
    F = apply_local(phi, w_space, ("id", "d"), w)
    m = np.zeros(phi.ndofs)
    for cls, cells in phi.class_cells():
        loc = phi.local_basis(cls).integrate()[:, 0]
        m += _scatter(phi.cell_dofs[cells], np.broadcast_to(loc, phi.cell_dofs[cells].shape).copy(), phi.ndofs)
    x0, i0 = solve_spd(A, F, cfg, "Poisson")
    y, i1 = solve_spd(A, m, cfg, "Poisson mean")
    mu = float(m @ x0) / float(m @ y)
    info = SolveInfo(i0.method, i0.iterations + i1.iterations, max(i0.residual, i1.residual),
                     i0.seconds + i1.seconds, phi.ndofs)
    return StokesResult(x0 - mu * y, np.zeros(0), np.zeros(0), info, mean_multiplier=mu)


def solve_generalized_stokes(phi: FESpace, p: FESpace, r: FESpace, w_space: FESpace, w,
                             cfg: SolverConfig) -> StokesResult:
    """Solve for ``(phi_h, p_h, r_h)`` given ``w_h``.

    With elimination, ``r_h = -D^{-1} B2^T p_h`` and the cell-interior
    ``phi`` DoFs are condensed before solving.
    """
    t0 = time.perf_counter()
    if phi.mean_constraint or p.is_zero:
        res = _poisson_mean_zero(phi, w_space, w, cfg)
    elif not cfg.eliminate:
        res = _stokes_full_saddle(phi, p, r, w_space, w, cfg)
    else:
        cs = condense_stokes(phi, p, r, w_space, w)
        n = cs.nshared + p.ndofs
        if not np.any(cs.F) and not np.any(cs.G):
            x, info = np.zeros(n), SolveInfo("trivial", size=n)
        elif cfg.use_direct(n):
            x, info = _stokes_direct(cs)
        else:
            x, info = _stokes_iterative(cs, phi, p, cfg)
        if not np.all(np.isfinite(x)):
            raise SolverError("Stokes solve produced non-finite values")
        phi_h = cs.recover(x[:cs.nshared], x[cs.nshared:])
        p_h = x[cs.nshared:]
        r_h = -(cs.B2.T @ p_h) / cs.Dr if cs.Dr.size else np.zeros(0)
        res = StokesResult(phi_h, p_h, r_h, info)
    res.info.seconds = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------------------
# the full pipeline


@dataclass
class MethodSpaces:
    w: FESpace
    lam: FESpace
    phi: FESpace
    p: FESpace
    r: FESpace
    u: FESpace
    z: FESpace

    @classmethod
    def build(cls, mesh: SimplicialMesh, k: int, j: int) -> "MethodSpaces":
        d = mesh.d
        if not 0 <= j <= d - 1:
            raise ValueError(f"j must satisfy 0 <= j <= d-1, got j={j}, d={d}")
        lam = build_space("trimmed", k + 1, j - 1, mesh, True)
        return cls(
            w=build_space("full", k, j, mesh, True),
            lam=lam,
            phi=build_space("phi", k, j, mesh, True),
            # for j = d-1 the pressure and its multiplier drop out
            p=build_space("star_trimmed", k, j + 2 if j < d - 1 else d + 2, mesh),
            r=build_space("star_trimmed", k, j + 3 if j < d - 1 else d + 2, mesh),
            u=build_space("trimmed", k + 1, j, mesh, True),
            z=build_space("trimmed", k + 1, j - 1, mesh, True),
        )


@dataclass
class DecoupledSolution:
    """Coefficient vectors of all discrete unknowns with diagnostics."""

    spaces: MethodSpaces
    w: np.ndarray
    lam: np.ndarray
    phi: np.ndarray
    p: np.ndarray
    r: np.ndarray
    u: np.ndarray
    z: np.ndarray
    infos: dict = field(default_factory=dict)
    multiplier_norms: dict = field(default_factory=dict)
    u_norm: float = 0.0
    seconds: float = 0.0

    @property
    def multiplier_ratio(self):
        worst = max(self.multiplier_norms.values(), default=0.0)
        if worst == 0.0:
            return 0.0
        return worst / self.u_norm if self.u_norm > 0 else np.inf

    def multipliers_vanish(self, tol):
        return self.multiplier_ratio <= tol


def _d_norm(space, vec):
    if space.is_zero:
        return 0.0
    return diagonal_inner(space).norm(vec)


def solve_fourth_order(mesh: SimplicialMesh, k: int, j: int, f, g=None, cfg: SolverConfig | None = None,
                       spaces: MethodSpaces | None = None) -> DecoupledSolution:
    """Run the three stages for data ``f`` (a ``j``-form) and ``g`` (a ``(j-1)``-form).

    ``f`` and ``g`` are callables on point arrays ``(N, d)`` returning
    component arrays, or ``None`` for zero data.  The caller guarantees
    ``delta f = 0``.
    """
    cfg = SolverConfig() if cfg is None else cfg
    t0 = time.perf_counter()
    S = MethodSpaces.build(mesh, k, j) if spaces is None else spaces
    qdeg = cfg.load_degree_for(mesh)
    F = load_vector(S.w, f, qdeg) if f is not None else np.zeros(S.w.ndofs)
    first = solve_mixed_darcy(S.w, S.lam, F, cfg, step="first")
    stokes = solve_generalized_stokes(S.phi, S.p, S.r, S.w, first.primal, cfg)
    Fu = apply_local(S.u, S.phi, ("d", "id"), stokes.phi)
    gz = load_vector(S.z, g, qdeg) if (g is not None and not S.z.is_zero) else None
    third = solve_mixed_darcy(S.u, S.z, Fu, cfg, multiplier_load=gz, step="third")
    sol = DecoupledSolution(S, first.primal, first.multiplier, stokes.phi, stokes.p, stokes.r,
                            third.primal, third.multiplier)
    sol.infos = {"first": first.info, "stokes": stokes.info, "third": third.info}
    sol.multiplier_norms = {"lambda": _d_norm(S.lam, first.multiplier),
                            "r": _d_norm(S.r, stokes.r),
                            "z": _d_norm(S.z, third.multiplier)}
    sol.u_norm = l2_norm(S.u, third.primal)
    sol.seconds = time.perf_counter() - t0
    return sol


# ---------------------------------------------------------------------------
# discrete inf-sup constant


@dataclass
class InfSupLevel:
    n: int
    beta: float | None
    size: int
    applicable: bool = True


def infsup_constant(mesh: SimplicialMesh, k: int, j: int, max_size=6000) -> InfSupLevel:
    """``beta_h = sqrt(lambda_min)`` of ``S q = beta^2 M_p q``.

    ``S = B1 A^{-1} B1^T + B2 N^{-1} B2^T`` where ``A`` is the ``H^1``
    seminorm matrix on ``Phi_h`` and ``N`` the graph-norm matrix of the
    ``r`` space.
    """
    d = mesh.d
    if j >= d - 1:
        return InfSupLevel(mesh.n or 0, None, 0, applicable=False)
    phi = build_space("phi", k, j, mesh, True)
    p = build_space("star_trimmed", k, j + 2, mesh)
    r = build_space("star_trimmed", k, j + 3, mesh)
    if phi.ndofs > max_size or p.ndofs > max_size:
        raise MemoryError(f"dense inf-sup probe capped at {max_size} unknowns")
    A = assemble("grad", phi).matrix.toarray()
    B1, B2 = assemble_stokes_b(phi, p, r)
    B1, B2 = B1.toarray(), B2.toarray()
    S = B1 @ np.linalg.solve(A, B1.T)
    if r.ndofs:
        if r.is_real_line:
            N = np.array([[2.0 * mesh.volume]])  # ||s||^2 + ||delta s||^2 with delta s = s vol
        else:
            N = (assemble("mass", r).matrix + assemble_delta_delta(r)).toarray()
        S = S + B2 @ np.linalg.solve(N, B2.T)
    Mp = assemble("mass", p).matrix.toarray()
    lam = sla.eigh(0.5 * (S + S.T), Mp, eigvals_only=True)
    return InfSupLevel(mesh.n or 0, float(np.sqrt(max(lam.min(), 0.0))), p.ndofs)


def assemble_delta_delta(space: FESpace):
    return assemble_map(space.mesh, space.cell_dofs, space.cell_dofs, (space.ndofs, space.ndofs),
                        lambda c: space.local_basis(c, "delta").inner(space.local_basis(c, "delta")))


def infsup_probe(meshes, j: int, k: int = 1, max_size=6000) -> list:
    """Per-level discrete inf-sup constants (``applicable=False`` when ``j >= d-1``)."""
    return [infsup_constant(m, k, j, max_size) for m in meshes]
