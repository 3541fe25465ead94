"""Global conforming finite element spaces of differential forms.

Local bases come from :mod:`decoupled_feec.polyforms` and carry keys that
attach each function to a subsimplex.  Since cells store their vertices in
ascending global order, equal keys on neighbouring cells describe the same
global function, and all orientation signs are ``+1`` (kept explicitly for
clarity).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from .mesh import SimplicialMesh
from .polyforms import PolynomialForm, ShapeBasis, space_P, space_Phi, space_Pminus

KINDS = ("full", "trimmed", "star_trimmed", "phi")
OPERATORS = ("id", "d", "delta")


def _local_shape(kind, k, j, cell) -> ShapeBasis:
    d = cell.d
    if kind == "full":
        return space_P(k, j, cell)
    if kind == "trimmed":
        return space_Pminus(k, j, cell)
    if kind == "star_trimmed":
        base = space_Pminus(k, d - j, cell)
        return ShapeBasis("star_trimmed", k, j, cell, base.functions.hodge_star(), base.keys)
    if kind == "phi":
        return space_Phi(k, j, cell)
    raise ValueError(f"unknown space kind {kind!r}")


class FESpace:
    """A global finite element space on a mesh.

    Attributes
    ----------
    kind : str
        ``"full"``, ``"trimmed"``, ``"star_trimmed"`` or ``"phi"``; zero spaces
        have kind ``"zero"`` and the one-dimensional space of constant
        ``(d+1)``-forms has kind ``"real"``.
    j : int
        Index as requested; for ``"phi"`` this is the problem index and the
        functions are ``(j+1)``-forms.
    form_degree : int
    ndofs : int
    cell_dofs : (nc, nloc) int array
        Global DoF of each local function, ``-1`` where a boundary DoF was
        removed.
    cell_signs : (nc, nloc) int8 array
    boundary_mask : (ndofs,) bool array
        DoFs attached to boundary subsimplices (all false for spaces with
        homogeneous boundary conditions, whose boundary DoFs are removed).
    """

    def __init__(self, kind, k, j, mesh: SimplicialMesh, homogeneous_bc=False,
                 mean_constraint=False):
        self.kind, self.k, self.j, self.mesh = kind, k, j, mesh
        self.homogeneous_bc = bool(homogeneous_bc)
        self.mean_constraint = bool(mean_constraint)
        self.form_degree = j + 1 if kind == "phi" else j
        self._shapes = {}
        self._ops = {}
        nc = mesh.num_cells
        if kind == "zero":
            self.ndofs = 0
            self.cell_dofs = np.zeros((nc, 0), dtype=np.int64)
            self.keys = []
        elif kind == "real":
            self.ndofs = 1
            self.cell_dofs = np.zeros((nc, 1), dtype=np.int64)
            self.keys = [(tuple(range(mesh.d + 1)), ("constant",))]
        else:
            self._number()
        self.cell_signs = np.ones(self.cell_dofs.shape, dtype=np.int8)
        if not hasattr(self, "boundary_mask"):
            self.boundary_mask = np.zeros(self.ndofs, dtype=bool)

    # numbering ---------------------------------------------------------------
    def _number(self):
        mesh, d = self.mesh, self.mesh.d
        keys = None
        for c in range(mesh.num_classes):
            kc = self.shape(c).keys
            if keys is None:
                keys = kc
            elif kc != keys:
                raise RuntimeError("local bases of different cell classes are not aligned")
        self.keys = keys
        local_faces = {ell: {f: i for i, f in enumerate(combinations(range(d + 1), ell + 1))}
                       for ell in range(d + 1)}
        patterns = {ell: [] for ell in range(d + 1)}
        for face, pat in keys:
            plist = patterns[len(face) - 1]
            if pat not in plist:
                plist.append(pat)
        counts = {}
        for face, pat in keys:
            counts[(face, pat)] = counts.get((face, pat), 0) + 1
        if any(v > 1 for v in counts.values()):
            raise RuntimeError("duplicate local DoF keys")
        for ell in range(d + 1):
            for f in local_faces[ell]:
                have = sorted(str(p) for (ff, p) in counts if ff == f)
                if have and have != sorted(str(p) for p in patterns[ell]):
                    raise RuntimeError("faces of equal dimension carry different DoF patterns")
        offsets, total = {}, 0
        for ell in range(d + 1):
            offsets[ell] = total
            total += len(mesh.faces(ell)) * len(patterns[ell])
        nc = mesh.num_cells
        raw = np.empty((nc, len(keys)), dtype=np.int64)
        on_bdry = np.empty((nc, len(keys)), dtype=bool)
        for a, (face, pat) in enumerate(keys):
            ell = len(face) - 1
            gface = mesh.cell_faces(ell)[:, local_faces[ell][face]]
            raw[:, a] = offsets[ell] + gface * len(patterns[ell]) + patterns[ell].index(pat)
            on_bdry[:, a] = mesh.boundary_flags(ell)[gface]
        used = np.zeros(total, dtype=bool)
        used[raw.ravel()] = True
        bflag = np.zeros(total, dtype=bool)
        bflag[raw[on_bdry]] = True
        keep = used & ~bflag if self.homogeneous_bc else used
        newid = np.cumsum(keep) - 1
        self.ndofs = int(keep.sum())
        self.cell_dofs = np.where(keep[raw], newid[raw], -1)
        self.boundary_mask = bflag[keep]
        self._interior_local = np.array([a for a, (face, _) in enumerate(keys) if len(face) == d + 1],
                                        dtype=np.int64)

    # local data -------------------------------------------------------------
    @property
    def is_zero(self):
        return self.ndofs == 0

    @property
    def is_real_line(self):
        return self.kind == "real"

    @property
    def num_local(self):
        return self.cell_dofs.shape[1]

    @property
    def interior_local(self):
        """Local indices of DoFs attached to the cell itself."""
        if self.kind in ("zero", "real"):
            return np.zeros(0, dtype=np.int64)
        return self._interior_local

    @property
    def shared_local(self):
        return np.setdiff1d(np.arange(self.num_local), self.interior_local)

    def shape(self, cls) -> ShapeBasis:
        if self.kind in ("zero", "real"):
            raise ValueError(f"a {self.kind} space has no local shape basis")
        if cls not in self._shapes:
            cell = self.mesh.class_geometry(cls)
            self._shapes[cls] = _local_shape(self.kind, self.k, self.j, cell)
        return self._shapes[cls]

    def local_basis(self, cls, op="id") -> PolynomialForm:
        """Local basis on cell class ``cls`` after applying ``op`` (id, d or delta)."""
        key = (cls, op)
        if key in self._ops:
            return self._ops[key]
        if self.kind == "real":
            if op != "delta":
                raise ValueError("constant top forms are only used through delta")
            cell = self.mesh.class_geometry(cls)
            out = PolynomialForm.constant(cell, np.ones((1, 1)), j=self.mesh.d)
        elif self.kind == "zero":
            raise ValueError("the zero space has no basis")
        else:
            base = self.shape(cls).functions
            if op == "id":
                out = base
            elif op == "d":
                out = base.exterior_derivative()
            elif op == "delta":
                out = base.codifferential()
            else:
                raise ValueError(f"unknown operator {op!r}")
        self._ops[key] = out
        return out

    def class_cells(self):
        """Yield ``(cls, cells)`` pairs."""
        labels = self.mesh.cell_class
        order = np.argsort(labels, kind="stable")
        bounds = np.searchsorted(labels[order], np.arange(self.mesh.num_classes + 1))
        for c in range(self.mesh.num_classes):
            yield c, order[bounds[c]:bounds[c + 1]]

    @cached_property
    def interior_offset(self):
        """First global index of cell-interior DoFs (they are numbered last, per cell)."""
        if self.interior_local.size == 0:
            return self.ndofs
        return int(self.cell_dofs[:, self.interior_local].min())

    def __repr__(self):
        bc = ", bc" if self.homogeneous_bc else ""
        return f"FESpace({self.kind}, k={self.k}, j={self.j}{bc}, ndofs={self.ndofs})"


def build_space(kind, k, j, mesh, homogeneous_bc=False) -> FESpace:
    """Build a global space.

    ``kind`` is one of ``full`` (``V^d_k Lambda^j``), ``trimmed``
    (``V^{d,-}_k Lambda^j``), ``star_trimmed`` (``star V^{d,-}_k Lambda^{d-j}``)
    or ``phi`` (the bubble-enriched ``H^1`` space of ``(j+1)``-forms).
    Requests outside the form-degree range return the zero space, except
    ``star_trimmed`` with ``j = d + 1`` which is the line of constant
    ``(d+1)``-forms whose codifferential is ``s vol``.
    """
    d = mesh.d
    if kind not in KINDS:
        raise ValueError(f"unknown space kind {kind!r}; expected one of {KINDS}")
    if k < 1:
        raise ValueError(f"degree k must be at least 1, got {k}")
    if kind == "phi":
        if not 0 <= j <= d - 1:
            raise ValueError(f"phi spaces need 0 <= j <= d-1, got j={j}")
        return FESpace("phi", k, j, mesh, homogeneous_bc, mean_constraint=(j == d - 1))
    if kind == "star_trimmed" and j == d + 1:
        return FESpace("real", k, j, mesh)
    if not 0 <= j <= d:
        return FESpace("zero", k, j, mesh)
    if kind == "star_trimmed" and homogeneous_bc:
        raise ValueError("star_trimmed spaces are used without boundary conditions")
    return FESpace(kind, k, j, mesh, homogeneous_bc)


# ---------------------------------------------------------------------------
# assembly helpers shared with the system module


def _drop_small(M, rtol=1e-13):
    scale = np.abs(M).max() if M.size else 0.0
    return np.abs(M) > rtol * scale


def assemble_local(test: FESpace, trial: FESpace, local, rtol=1e-13) -> sp.csr_matrix:
    """Assemble ``sum_T local(cls)`` into a sparse ``test.ndofs x trial.ndofs`` matrix.

    ``local(cls)`` returns the element matrix (test x trial) of class ``cls``.
    """
    rows, cols, vals = [], [], []
    space = test if not test.is_real_line else trial
    for cls, cells in space.class_cells():
        if cells.size == 0:
            continue
        L = local(cls)
        mask = _drop_small(L, rtol)
        a, b = np.nonzero(mask)
        if a.size == 0:
            continue
        r = test.cell_dofs[cells][:, a]
        c = trial.cell_dofs[cells][:, b]
        s = test.cell_signs[cells][:, a] * trial.cell_signs[cells][:, b]
        v = L[a, b][None, :] * s
        ok = (r >= 0) & (c >= 0)
        rows.append(r[ok].astype(np.int32))
        cols.append(c[ok].astype(np.int32))
        vals.append(v[ok])
    shape = (test.ndofs, trial.ndofs)
    if not rows:
        return sp.csr_matrix(shape)
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)
    return M.tocsr()


def mass_matrix(space: FESpace, op="id") -> sp.csr_matrix:
    if space.is_zero:
        return sp.csr_matrix((0, 0))
    if space.is_real_line:
        if op != "id":
            raise ValueError("only the identity is defined on constant top forms here")
        return sp.csr_matrix(np.array([[space.mesh.volume]]))
    return assemble_local(space, space, lambda c: space.local_basis(c, op).inner(space.local_basis(c, op)))


@dataclass
class DiagonalInnerProduct:
    """Lumped inner product ``<a, b>_D = sum_i a_i b_i ||phi_i||^2``."""

    space: FESpace
    weights: np.ndarray = field(repr=False)

    def __call__(self, a, b):
        return float(np.sum(np.asarray(a) * np.asarray(b) * self.weights))

    def norm(self, a):
        return float(np.sqrt(self(a, a)))

    def matrix(self):
        return sp.diags(self.weights)


def diagonal_inner(space: FESpace) -> DiagonalInnerProduct:
    """Diagonal of the mass matrix, computed from exact local integrals."""
    if space.is_zero:
        return DiagonalInnerProduct(space, np.zeros(0))
    if space.is_real_line:
        return DiagonalInnerProduct(space, np.array([space.mesh.volume]))
    w = np.zeros(space.ndofs)
    for cls, cells in space.class_cells():
        B = space.local_basis(cls)
        local = np.einsum("aa->a", B.inner(B))
        idx = space.cell_dofs[cells]
        ok = idx >= 0
        w += np.bincount(idx[ok], weights=np.broadcast_to(local, idx.shape)[ok], minlength=space.ndofs)
    if np.any(w <= 0):
        raise ArithmeticError("nonpositive diagonal weight: broken basis")
    return DiagonalInnerProduct(space, w)


# ---------------------------------------------------------------------------
# derivative operators between global spaces and exactness audits


def _express(source: PolynomialForm, target: PolynomialForm, tol=1e-9):
    """Coefficients ``C`` with ``source[a] = sum_b C[a, b] target[b]``."""
    m = max(source.degree, target.degree)
    S = source.elevate(m).flat()
    T = target.elevate(m).flat()
    if T.shape[0] == 0:
        if np.abs(S).max(initial=0.0) > tol:
            raise ArithmeticError("image is not contained in the zero target space")
        return np.zeros((S.shape[0], 0))
    C, *_ = np.linalg.lstsq(T.T, S.T, rcond=None)
    resid = np.abs(T.T @ C - S.T).max(initial=0.0)
    if resid > tol * max(1.0, np.abs(S).max(initial=0.0)):
        raise ArithmeticError(f"image not contained in the target space (residual {resid:.2e})")
    C = C.T
    rounded = np.round(C)
    if np.abs(C - rounded).max(initial=0.0) < 1e-9:
        C = rounded
    return C


def derivative_matrix(source: FESpace, target: FESpace, op=None) -> sp.csr_matrix:
    """Matrix of ``d`` (or ``delta`` for star spaces) from ``source`` into ``target``.

    Entries are read off cellwise and must agree on shared DoFs; for lowest
    order families they are integers.
    """
    if op is None:
        op = "delta" if source.kind in ("star_trimmed", "real") else "d"
    shape = (target.ndofs, source.ndofs)
    if source.is_zero or target.is_zero:
        return sp.csr_matrix(shape)
    if source.is_real_line:
        # delta(1) = vol expressed in the target basis
        rows, vals = [], []
        for cls, cells in target.class_cells():
            vol = source.local_basis(cls, "delta")
            C = _express(vol, target.local_basis(cls))[0]
            rows.append(target.cell_dofs[cells]); vals.append(np.broadcast_to(C, (cells.size, C.size)))
        r, v = np.concatenate(rows).ravel(), np.concatenate(vals).ravel()
        return _consistent(r, np.zeros_like(r), v, shape)
    rows, cols, vals = [], [], []
    for cls, cells in source.class_cells():
        img = source.local_basis(cls, op)
        C = _express(img, target.local_basis(cls))  # (src, tgt)
        a, b = np.nonzero(np.abs(C) > 1e-12)
        rows.append(target.cell_dofs[cells][:, b].ravel())
        cols.append(source.cell_dofs[cells][:, a].ravel())
        sign = (target.cell_signs[cells][:, b] * source.cell_signs[cells][:, a]).ravel()
        vals.append(np.tile(C[a, b], cells.size) * sign)
    return _consistent(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), shape)


def _consistent(rows, cols, vals, shape):
    # a free source DoF must not reach a removed target DoF
    if np.any((cols >= 0) & (rows < 0) & (np.abs(vals) > 1e-10)):
        raise ArithmeticError("derivative leaves the space with boundary conditions")
    ok = (rows >= 0) & (cols >= 0)
    rows, cols, vals = rows[ok], cols[ok], vals[ok]
    key = rows.astype(np.int64) * max(shape[1], 1) + cols
    uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
    ref = vals[first][inv]
    if np.abs(vals - ref).max(initial=0.0) > 1e-9 * max(1.0, np.abs(vals).max(initial=0.0)):
        raise ArithmeticError("cellwise derivative coefficients disagree on shared DoFs")
    return sp.csr_matrix((vals[first], (rows[first], cols[first])), shape=shape)


def broken_operator(space: FESpace, op="d") -> sp.csr_matrix:
    """Map from global coefficients to the cellwise coefficients of ``op`` applied."""
    if space.is_zero:
        return sp.csr_matrix((0, 0))
    blocks_r, blocks_c, blocks_v = [], [], []
    offset = 0
    for cls, cells in space.class_cells():
        img = space.local_basis(cls, op).flat()  # (nloc, L)
        L = img.shape[1]
        a, l = np.nonzero(np.abs(img) > 1e-14)
        idx = space.cell_dofs[cells]
        r = (offset + np.arange(cells.size)[:, None] * L + l[None, :]).ravel()
        c = idx[:, a].ravel()
        v = np.tile(img[a, l], cells.size) * space.cell_signs[cells][:, a].ravel()
        ok = c >= 0
        blocks_r.append(r[ok]); blocks_c.append(c[ok]); blocks_v.append(v[ok])
        offset += cells.size * L
    return sp.csr_matrix((np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
                         shape=(offset, space.ndofs))


def _rank(M, tol=1e-9):
    A = M.toarray() if sp.issparse(M) else np.asarray(M)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > tol * max(s[0], 1.0)))


@dataclass
class SequenceCheck:
    """``kernel_dim`` of the middle map versus ``image_rank`` of the incoming one.

    ``gap`` is the expected difference: 1 for top-degree forms with boundary
    conditions (the image of ``d`` has zero mean), 0 otherwise.
    """

    name: str
    kernel_dim: int
    image_rank: int
    gap: int = 0

    @property
    def ok(self):
        return self.kernel_dim == self.image_rank + self.gap


@dataclass
class ExactnessReport:
    k: int
    j: int
    checks: list
    composition_norms: dict

    @property
    def ok(self):
        return all(c.ok for c in self.checks) and all(v == 0.0 for v in self.composition_norms.values())


def _kernel_dim(space: FESpace, op):
    if space.is_zero:
        return 0
    if space.form_degree == (0 if op == "delta" else space.mesh.d):
        return space.ndofs
    return space.ndofs - _rank(broken_operator(space, op))


def exactness_audit(mesh: SimplicialMesh, k: int, j: int) -> ExactnessReport:
    """Rank checks of the three short sequences at index ``j`` plus ``dd = 0``.

    * ``ringV^{d,-}_{k+1} Lambda^{j-1} -> ringV^d_k Lambda^j -> d(...)``
    * ``ringV^{d,-}_k Lambda^{j-1} -> ringV^{d,-}_k Lambda^j -> d(...)``
    * ``V^{delta,-}_k Lambda^{j+1} -> V^{delta,-}_k Lambda^j -> delta(...)``
    """
    if not 0 <= j <= mesh.d:
        raise ValueError(f"form degree {j} out of range")
    checks, comps = [], {}
    gap = 1 if j == mesh.d else 0
    full = build_space("full", k, j, mesh, True)
    prev = build_space("trimmed", k + 1, j - 1, mesh, True)
    checks.append(SequenceCheck("full", _kernel_dim(full, "d"), _rank(derivative_matrix(prev, full)), gap))

    trim = build_space("trimmed", k, j, mesh, True)
    tprev = build_space("trimmed", k, j - 1, mesh, True)
    dprev = derivative_matrix(tprev, trim)
    checks.append(SequenceCheck("trimmed", _kernel_dim(trim, "d"), _rank(dprev), gap))
    if j + 1 <= mesh.d:
        tnext = build_space("trimmed", k, j + 1, mesh, True)
        comps["d d"] = float(abs(derivative_matrix(trim, tnext) @ dprev).max()) if dprev.nnz else 0.0

    star = build_space("star_trimmed", k, j, mesh)
    snext = build_space("star_trimmed", k, j + 1, mesh)
    dnext = derivative_matrix(snext, star)
    checks.append(SequenceCheck("star", _kernel_dim(star, "delta"), _rank(dnext)))
    if j >= 1:
        sprev = build_space("star_trimmed", k, j - 1, mesh)
        comps["delta delta"] = float(abs(derivative_matrix(star, sprev) @ dnext).max()) if dnext.nnz else 0.0
    return ExactnessReport(k, j, checks, comps)
