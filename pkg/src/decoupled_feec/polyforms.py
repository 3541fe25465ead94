"""Polynomial differential forms on a simplex.

A :class:`PolynomialForm` stores the Cartesian components of a ``j``-form whose
coefficients are homogeneous polynomials of a fixed degree ``m`` in the
barycentric coordinates of a simplex.  Every polynomial of degree at most ``m``
has exactly one such representation (multiply lower-degree parts by
``(sum_i lambda_i)^r``), so linear algebra on the coefficient arrays is exact.

Coefficient arrays have shape ``batch + (n_monomials, C(d, j))`` which lets a
whole local basis live in one object.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb, factorial

import numpy as np
import scipy.linalg as sla

from .exterior import (AlternatingForm, contraction_tensor, hodge_matrix, index_sets,
                       minors, wedge_tensor)
from .mesh import CellGeometry

# ---------------------------------------------------------------------------
# barycentric monomial tables


@lru_cache(maxsize=None)
def monomials(nv: int, m: int) -> np.ndarray:
    """Exponents of all homogeneous monomials of degree ``m`` in ``nv`` variables."""
    if m < 0:
        return np.zeros((0, nv), dtype=np.int64)
    out = []

    def rec(prefix, left, slots):
        if slots == 1:
            out.append(prefix + (left,))
            return
        for a in range(left, -1, -1):
            rec(prefix + (a,), left - a, slots - 1)

    rec((), m, nv)
    arr = np.array(out, dtype=np.int64).reshape(-1, nv)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def monomial_lookup(nv: int, m: int) -> dict:
    return {tuple(int(v) for v in a): i for i, a in enumerate(monomials(nv, m))}


def _mfact(alpha):
    out = 1
    for a in alpha:
        out *= factorial(int(a))
    return out


@lru_cache(maxsize=None)
def elevation_matrix(nv: int, m_from: int, m_to: int) -> np.ndarray:
    """Matrix of multiplication by ``(sum lambda)^(m_to - m_from)``."""
    r = m_to - m_from
    if r < 0:
        raise ValueError("cannot lower the degree")
    look = monomial_lookup(nv, m_to)
    E = np.zeros((len(look), len(monomials(nv, m_from))))
    for b, alpha in enumerate(monomials(nv, m_from)):
        for gamma in monomials(nv, r):
            E[look[tuple(int(v) for v in alpha + gamma)], b] += factorial(r) / _mfact(gamma)
    E.setflags(write=False)
    return E


@lru_cache(maxsize=None)
def barycentric_derivatives(nv: int, m: int) -> np.ndarray:
    """``D[i]`` maps degree-``m`` coefficients to those of ``d/d lambda_i``."""
    D = np.zeros((nv, len(monomials(nv, max(m - 1, 0))), len(monomials(nv, m))))
    if m == 0:
        return D
    look = monomial_lookup(nv, m - 1)
    for b, alpha in enumerate(monomials(nv, m)):
        for i in range(nv):
            if alpha[i]:
                beta = list(int(v) for v in alpha)
                beta[i] -= 1
                D[i, look[tuple(beta)], b] = alpha[i]
    D.setflags(write=False)
    return D


@lru_cache(maxsize=None)
def product_index(nv: int, m1: int, m2: int) -> np.ndarray:
    """Index of ``lambda^(a+b)`` in degree ``m1+m2`` for all pairs ``(a, b)``."""
    look = monomial_lookup(nv, m1 + m2)
    A, B = monomials(nv, m1), monomials(nv, m2)
    idx = np.array([[look[tuple(int(v) for v in a + b)] for b in B] for a in A], dtype=np.int64)
    idx = idx.reshape(len(A), len(B))
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def simplex_moments(nv: int, m: int) -> np.ndarray:
    """Mean values ``|f|^-1 int_f lambda^alpha`` on a simplex with ``nv`` vertices."""
    ell = nv - 1
    vals = np.array([factorial(ell) * _mfact(a) / factorial(m + ell) for a in monomials(nv, m)])
    vals.setflags(write=False)
    return vals


@lru_cache(maxsize=None)
def product_moments(nv: int, m1: int, m2: int) -> np.ndarray:
    """``I[a, b]`` = mean value of ``lambda^a lambda^b`` over the simplex."""
    return simplex_moments(nv, m1 + m2)[product_index(nv, m1, m2)]


def monomial_values(nv, m, bary):
    """Values of all degree-``m`` monomials at barycentric points, shape ``(npts, nmono)``."""
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    A = monomials(nv, m)
    out = np.ones((bary.shape[0], A.shape[0]))
    for i in range(nv):
        for p in range(1, m + 1):
            mask = A[:, i] == p
            if mask.any():
                out[:, mask] *= (bary[:, i] ** p)[:, None]
    return out


# ---------------------------------------------------------------------------
# polynomial forms


class PolynomialForm:
    """Polynomial ``j``-form(s) on a simplex in barycentric monomial coefficients.

    Parameters
    ----------
    cell : CellGeometry
    j : int
        Form degree.
    degree : int
        Homogeneous barycentric degree ``m`` of the coefficients; the
        polynomial degree of the form is at most ``m``.
    coeffs : array, shape ``batch + (n_monomials, C(d, j))``
    """

    __array_priority__ = 100

    def __init__(self, cell: CellGeometry, j: int, degree: int, coeffs):
        self.cell = cell
        self.d = cell.d
        if not 0 <= j <= self.d:
            raise ValueError(f"form degree {j} out of range for d={self.d}")
        self.j = j
        self.degree = max(int(degree), 0)
        c = np.asarray(coeffs, dtype=float)
        expect = (len(monomials(self.nv, self.degree)), comb(self.d, j))
        if c.shape[-2:] != expect:
            raise ValueError(f"coefficient shape {c.shape} does not end in {expect}")
        self.coeffs = c

    # construction -----------------------------------------------------------
    @property
    def nv(self):
        return self.d + 1

    @property
    def shape(self):
        return self.coeffs.shape[:-2]

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, idx):
        if not self.shape:
            raise TypeError("a single form is not indexable")
        return PolynomialForm(self.cell, self.j, self.degree, self.coeffs[idx])

    def _new(self, j, degree, coeffs):
        return PolynomialForm(self.cell, j, degree, coeffs)

    @classmethod
    def zeros(cls, cell, j, degree=0, shape=()):
        n = len(monomials(cell.d + 1, max(degree, 0)))
        return cls(cell, j, degree, np.zeros(tuple(shape) + (n, comb(cell.d, j))))

    @classmethod
    def constant(cls, cell, value, j=None):
        """Constant form from an :class:`AlternatingForm` or component array ``(..., C(d,j))``."""
        if isinstance(value, AlternatingForm):
            comps, j = value.coeffs, value.j
        else:
            comps = np.asarray(value, dtype=float)
            if j is None:
                j = next(jj for jj in range(cell.d + 1) if comb(cell.d, jj) == comps.shape[-1])
        return cls(cell, j, 0, comps[..., None, :])

    @classmethod
    def monomial(cls, cell, alpha, value, j=None):
        """``lambda^alpha`` times a constant form."""
        alpha = tuple(int(a) for a in alpha)
        base = cls.constant(cell, value, j)
        return base.times_monomial(alpha)

    @classmethod
    def barycentric(cls, cell, i):
        """The 0-form ``lambda_i``."""
        e = [0] * (cell.d + 1)
        e[i] = 1
        return cls.monomial(cell, e, np.ones(1), j=0)

    @classmethod
    def coordinate(cls, cell, m):
        """The 0-form ``x_m``."""
        coeffs = cell.vertices[:, m].reshape(-1, 1)
        return cls(cell, 0, 1, _reorder_linear(cell.d + 1, coeffs))

    @classmethod
    def dlambda(cls, cell, sigma):
        """Constant form ``dlambda_{sigma_0} ^ ... ^ dlambda_{sigma_{j-1}}``."""
        sigma = tuple(sigma)
        comps = minors(cell.grad_bary, sigma, len(sigma))
        return cls(cell, len(sigma), 0, comps[None, :])

    @classmethod
    def whitney(cls, cell, sigma):
        """Whitney form ``sum_i (-1)^i lambda_{sigma_i} dlambda_{sigma without sigma_i}``."""
        sigma = tuple(sigma)
        j = len(sigma) - 1
        out = cls.zeros(cell, j, 1)
        for i, s in enumerate(sigma):
            rest = sigma[:i] + sigma[i + 1:]
            term = cls.dlambda(cell, rest) * ((-1) ** i)
            e = [0] * (cell.d + 1)
            e[s] = 1
            out = out + term.times_monomial(e)
        return out

    @classmethod
    def stack(cls, forms):
        """Stack single forms (or batches) of equal ``j`` into one batch."""
        forms = list(forms)
        if not forms:
            raise ValueError("nothing to stack")
        m = max(f.degree for f in forms)
        parts = []
        for f in forms:
            g = f.elevate(m)
            parts.append(g.coeffs.reshape((-1,) + g.coeffs.shape[-2:]))
        j = forms[0].j
        if any(f.j != j for f in forms):
            raise ValueError("cannot stack forms of different degree")
        return cls(forms[0].cell, j, m, np.concatenate(parts, axis=0))

    # algebra ----------------------------------------------------------------
    def elevate(self, m):
        if m == self.degree:
            return self
        E = elevation_matrix(self.nv, self.degree, m)
        return self._new(self.j, m, np.einsum("pq,...qc->...pc", E, self.coeffs))

    def _aligned(self, other):
        if not isinstance(other, PolynomialForm):
            return None
        if other.j != self.j:
            raise ValueError(f"cannot combine a {self.j}-form with a {other.j}-form")
        m = max(self.degree, other.degree)
        return self.elevate(m).coeffs, other.elevate(m).coeffs, m

    def __add__(self, other):
        al = self._aligned(other)
        if al is None:
            return NotImplemented
        a, b, m = al
        return self._new(self.j, m, a + b)

    def __sub__(self, other):
        al = self._aligned(other)
        if al is None:
            return NotImplemented
        a, b, m = al
        return self._new(self.j, m, a - b)

    def __neg__(self):
        return self._new(self.j, self.degree, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, PolynomialForm):
            return self.wedge(scalar)
        return self._new(self.j, self.degree, self.coeffs * scalar)

    __rmul__ = __mul__

    def combine(self, matrix):
        """Linear combinations ``out[a] = sum_b matrix[a, b] self[b]`` of a 1-D batch."""
        return self._new(self.j, self.degree, np.einsum("ab,b...->a...", np.asarray(matrix, float), self.coeffs))

    def times_monomial(self, alpha):
        alpha = tuple(int(a) for a in alpha)
        r = sum(alpha)
        idx = product_index(self.nv, r, self.degree)[monomial_lookup(self.nv, r)[alpha]]
        out = np.zeros(self.shape + (len(monomials(self.nv, self.degree + r)), self.coeffs.shape[-1]))
        out[..., idx, :] = self.coeffs
        return self._new(self.j, self.degree + r, out)

    def times_bubble(self):
        """Multiply by ``b_T = lambda_0 lambda_1 ... lambda_d``."""
        return self.times_monomial((1,) * self.nv)

    def times_scalar(self, other: "PolynomialForm"):
        """Product with a single polynomial 0-form."""
        if other.j != 0 or other.shape:
            raise ValueError("expected a single 0-form")
        idx = product_index(self.nv, other.degree, self.degree)
        M = np.zeros((len(monomials(self.nv, other.degree + self.degree)), len(monomials(self.nv, self.degree))))
        for a, val in enumerate(other.coeffs[:, 0]):
            if val != 0.0:
                M[idx[a], np.arange(idx.shape[1])] += val
        return self._new(self.j, self.degree + other.degree, np.einsum("pq,...qc->...pc", M, self.coeffs))

    def wedge(self, other: "PolynomialForm"):
        """Pointwise exterior product with a single polynomial form."""
        if other.shape:
            raise ValueError("right operand must be a single form")
        if self.j + other.j > self.d:
            raise ValueError(f"degree overflow: {self.j} + {other.j} > {self.d}")
        W = wedge_tensor(self.d, self.j, other.j)
        idx = product_index(self.nv, self.degree, other.degree)
        out = np.zeros(self.shape + (len(monomials(self.nv, self.degree + other.degree)), W.shape[2]))
        prod = np.einsum("...pa,qb,abc->...pqc", self.coeffs, other.coeffs, W)
        flat = prod.reshape(self.shape + (-1, W.shape[2]))
        target = idx.ravel()
        for t in range(target.size):
            out[..., target[t], :] += flat[..., t, :]
        return self._new(self.j + other.j, self.degree + other.degree, out)

    # calculus ---------------------------------------------------------------
    def partials(self):
        """Coefficients of ``d/dx_m`` of every component: ``(d,) + batch + (nmono', ncomp)``."""
        D = barycentric_derivatives(self.nv, self.degree)
        Dx = np.einsum("im,ipq->mpq", self.cell.grad_bary, D)
        return np.einsum("mpq,...qc->m...pc", Dx, self.coeffs)

    def gradient(self):
        """Componentwise gradient, coefficients of shape ``batch + (nmono', ncomp, d)``."""
        return np.moveaxis(self.partials(), 0, -1)

    def exterior_derivative(self):
        if self.j >= self.d:
            raise ValueError("exterior derivative of a top-degree form")
        W = wedge_tensor(self.d, 1, self.j)
        coeffs = np.einsum("m...pa,mab->...pb", self.partials(), W)
        return self._new(self.j + 1, self.degree - 1, coeffs)

    def hodge_star(self):
        H = hodge_matrix(self.d, self.j)
        return self._new(self.d - self.j, self.degree, self.coeffs @ H.T)

    def inverse_hodge_star(self):
        sign = (-1) ** (self.j * (self.d - self.j))
        return self.hodge_star() * sign

    def codifferential(self):
        """``delta`` with ``star delta w = (-1)^j d star w``."""
        if self.j == 0:
            raise ValueError("codifferential of a 0-form")
        sign = (-1) ** self.j
        return self.hodge_star().exterior_derivative().inverse_hodge_star() * sign

    def koszul(self, origin=None):
        """Contraction with the position field ``x - origin`` (barycenter by default)."""
        if self.j == 0:
            raise ValueError("the Koszul operator is undefined on 0-forms")
        o = self.cell.barycenter if origin is None else np.asarray(origin, dtype=float)
        X = self.cell.vertices - o  # X_m = sum_i lambda_i X[i, m]
        K = contraction_tensor(self.d, self.j)
        idx = product_index(self.nv, 1, self.degree)
        out = np.zeros(self.shape + (len(monomials(self.nv, self.degree + 1)), K.shape[2]))
        contracted = np.einsum("im,...qa,mab->i...qb", X, self.coeffs, K)
        for i in range(self.nv):
            out[..., idx[i], :] += contracted[i]
        return self._new(self.j - 1, self.degree + 1, out)

    # evaluation and integration ---------------------------------------------
    def evaluate(self, bary):
        """Components at barycentric points: ``batch + (npts, ncomp)``."""
        V = monomial_values(self.nv, self.degree, bary)
        return np.einsum("xp,...pc->...xc", V, self.coeffs)

    def evaluate_gradient(self, bary):
        """Componentwise gradients at points: ``batch + (npts, ncomp, d)``."""
        m = max(self.degree - 1, 0)
        V = monomial_values(self.nv, m, bary)
        return np.einsum("xp,...pcm->...xcm", V, self.gradient())

    def __call__(self, bary) -> AlternatingForm:
        if self.shape:
            raise TypeError("call a single form, or use evaluate() for batches")
        vals = self.evaluate(np.asarray(bary, float)[None, :])[0]
        return AlternatingForm(self.d, self.j, vals)

    def integrate(self):
        """``int_T`` of the components: ``batch + (ncomp,)``."""
        mom = simplex_moments(self.nv, self.degree) * self.cell.volume
        return np.einsum("p,...pc->...c", mom, self.coeffs)

    def inner(self, other: "PolynomialForm"):
        """``L^2(T)`` inner products between two batches, shape ``self.shape + other.shape``."""
        if other.j != self.j:
            raise ValueError(f"degree mismatch: {self.j} vs {other.j}")
        I = product_moments(self.nv, self.degree, other.degree) * self.cell.volume
        a = self.coeffs.reshape((-1,) + self.coeffs.shape[-2:])
        b = other.coeffs.reshape((-1,) + other.coeffs.shape[-2:])
        out = np.einsum("apc,pq,bqc->ab", a, I, b, optimize=True)
        return out.reshape(self.shape + other.shape)

    def gradient_inner(self, other: "PolynomialForm"):
        """``int_T grad(self) : grad(other)`` componentwise."""
        if other.j != self.j:
            raise ValueError(f"degree mismatch: {self.j} vs {other.j}")
        m1, m2 = max(self.degree - 1, 0), max(other.degree - 1, 0)
        I = product_moments(self.nv, m1, m2) * self.cell.volume
        a = self.gradient().reshape((-1, len(monomials(self.nv, m1)), comb(self.d, self.j) * self.d))
        b = other.gradient().reshape((-1, len(monomials(self.nv, m2)), comb(self.d, self.j) * self.d))
        out = np.einsum("apc,pq,bqc->ab", a, I, b, optimize=True)
        return out.reshape(self.shape + other.shape)

    def face_mean(self, face, weight_exponent=None):
        """Mean over a subsimplex of each component times ``lambda_face^beta``.

        ``face`` lists local vertex indices; ``weight_exponent`` is indexed by
        the face's vertices.  Returns ``batch + (ncomp,)``.
        """
        face = tuple(face)
        A = monomials(self.nv, self.degree)
        off = [i for i in range(self.nv) if i not in face]
        on_face = np.all(A[:, off] == 0, axis=1) if off else np.ones(len(A), dtype=bool)
        beta = np.zeros(len(face), dtype=np.int64) if weight_exponent is None else np.asarray(weight_exponent)
        sub = A[on_face][:, list(face)] + beta
        ell = len(face) - 1
        total = int(sub[0].sum()) if len(sub) else 0
        mean = np.array([factorial(ell) * _mfact(a) / factorial(total + ell) for a in sub])
        return np.einsum("p,...pc->...c", mean, self.coeffs[..., on_face, :])

    def flat(self):
        """Coefficients as rows of a 2-D matrix (batch flattened)."""
        return self.coeffs.reshape(-1, self.coeffs.shape[-2] * self.coeffs.shape[-1])

    def is_zero(self, atol=1e-12):
        return bool(np.all(np.abs(self.coeffs) <= atol))

    def __repr__(self):
        return f"PolynomialForm(d={self.d}, j={self.j}, degree={self.degree}, shape={self.shape})"


def _reorder_linear(nv, vals):
    """Coefficients of ``sum_i vals[i] lambda_i`` in the degree-1 monomial order."""
    look = monomial_lookup(nv, 1)
    out = np.zeros((nv, vals.shape[1]))
    for i in range(nv):
        e = [0] * nv
        e[i] = 1
        out[look[tuple(e)]] = vals[i]
    return out


def exterior_derivative(p: PolynomialForm) -> PolynomialForm:
    return p.exterior_derivative()


def codifferential(p: PolynomialForm) -> PolynomialForm:
    return p.codifferential()


def span_rank(forms: PolynomialForm, tol=1e-10) -> int:
    """Dimension of the span of a batch of forms."""
    F = forms.flat()
    if F.size == 0:
        return 0
    s = np.linalg.svd(F, compute_uv=False)
    return int(np.sum(s > tol * max(s[0], 1.0)))


def independent_subset(forms: PolynomialForm, tol=1e-10) -> PolynomialForm:
    """A linearly independent subset spanning the same space (pivoted QR)."""
    F = forms.flat()
    if F.shape[0] == 0:
        return forms
    _, R, piv = sla.qr(F.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0))) if diag.size else 0
    keep = np.sort(piv[:rank])
    return forms[keep]


# ---------------------------------------------------------------------------
# shape bases


def _multi_indices(nv, r):
    return [tuple(int(v) for v in a) for a in monomials(nv, r)]


@dataclass
class DofFunctional:
    """One degree of freedom of the bubble-enriched element.

    kind is ``"vertex"``, ``"face"`` or ``"interior"``; ``face`` lists local
    vertex indices; ``component`` indexes the Cartesian frame of
    ``Alt^{j+1}``; ``exponent`` is the face monomial weight; ``weight`` is
    the interior test form.
    """

    kind: str
    face: tuple
    component: int = 0
    exponent: tuple = ()
    weight: PolynomialForm | None = field(default=None, repr=False)

    def apply(self, forms: PolynomialForm):
        if self.kind == "vertex":
            i = self.face[0]
            e = [0] * forms.nv
            e[i] = forms.degree
            row = monomial_lookup(forms.nv, forms.degree)[tuple(e)]
            return forms.coeffs[..., row, self.component]
        if self.kind == "face":
            return forms.face_mean(self.face, self.exponent)[..., self.component]
        if self.kind == "interior":
            return forms.inner(self.weight) / forms.cell.volume
        raise ValueError(f"unknown DoF kind {self.kind!r}")

    def key(self, nv):
        if self.kind == "interior":
            return (tuple(range(nv)), ("interior", self.exponent))
        return (self.face, (self.kind, tuple(self.exponent), self.component))


@dataclass
class ShapeBasis:
    """Local basis of a polynomial form space on one simplex.

    ``keys[i]`` associates basis function ``i`` with a local subsimplex
    (sorted tuple of local vertex indices) and a pattern that identifies it
    among the functions attached to that subsimplex.  Functions with equal
    keys on neighbouring cells glue into one global basis function.
    """

    kind: str
    k: int
    j: int
    cell: CellGeometry
    functions: PolynomialForm
    keys: list
    dofs: list | None = None
    condition: float = 1.0

    def __len__(self):
        return len(self.keys)

    @property
    def dim(self):
        return len(self.keys)


def _relative(face, alpha, sigma):
    pos = {v: i for i, v in enumerate(face)}
    return (tuple(alpha[v] for v in face), tuple(pos[s] for s in sigma))


def space_P(k: int, j: int, cell: CellGeometry) -> ShapeBasis:
    """Geometrically decomposed basis ``lambda^alpha dlambda_sigma`` of ``P_k Lambda^j``."""
    d, nv = cell.d, cell.d + 1
    if k < 0 or not 0 <= j <= d:
        raise ValueError(f"unsupported P_{k} Lambda^{j}")
    if k == 0:
        frame = PolynomialForm.constant(cell, np.eye(comb(d, j)), j)
        keys = [(tuple(range(nv)), ("frame", c)) for c in range(comb(d, j))]
        return ShapeBasis("full", k, j, cell, frame, keys)
    funcs, keys = [], []
    for ell in range(nv):
        for face in combinations(range(nv), ell + 1):
            for sigma in combinations(face, j):
                rest = [v for v in face if v not in sigma]
                if not rest:
                    continue
                lo = min(rest)
                for alpha in _multi_indices(nv, k):
                    supp = {i for i, a in enumerate(alpha) if a}
                    if supp | set(sigma) != set(face):
                        continue
                    if any(alpha[i] for i in range(lo)):
                        continue
                    funcs.append(PolynomialForm.dlambda(cell, sigma).times_monomial(alpha))
                    keys.append((face, _relative(face, alpha, sigma)))
    basis = PolynomialForm.stack(funcs)
    return ShapeBasis("full", k, j, cell, basis, keys)


def space_Pminus(k: int, j: int, cell: CellGeometry) -> ShapeBasis:
    """Geometrically decomposed basis ``lambda^alpha phi_sigma`` of ``P_k^- Lambda^j``."""
    d, nv = cell.d, cell.d + 1
    if k < 1 or not 0 <= j <= d:
        raise ValueError(f"unsupported P_{k}^- Lambda^{j}")
    funcs, keys = [], []
    for sigma in combinations(range(nv), j + 1):
        phi = PolynomialForm.whitney(cell, sigma)
        lo = min(sigma)
        for alpha in _multi_indices(nv, k - 1):
            if any(alpha[i] for i in range(lo)):
                continue
            face = tuple(sorted({i for i, a in enumerate(alpha) if a} | set(sigma)))
            funcs.append(phi.times_monomial(alpha))
            keys.append((face, _relative(face, alpha, sigma)))
    basis = PolynomialForm.stack(funcs)
    return ShapeBasis("trimmed", k, j, cell, basis, keys)


def _full_spanning(k, j, cell):
    """All ``lambda^alpha dx_sigma`` (a basis of ``P_k Lambda^j``), or the volume
    constant for the formal degree ``d + 1``."""
    d = cell.d
    if j == d + 1:
        return None
    if k < 0:
        return PolynomialForm.zeros(cell, j, 0, shape=(0,))
    eye = np.eye(comb(d, j))
    funcs = [PolynomialForm.constant(cell, eye, j).times_monomial(a) for a in _multi_indices(d + 1, k)]
    return PolynomialForm.stack(funcs)


def codifferential_image(k, j, cell):
    """Independent spanning set of ``delta P_k Lambda^j`` (``j`` may be ``d+1``)."""
    d = cell.d
    if j == d + 1:
        return PolynomialForm.constant(cell, np.ones((1, 1)), j=d)  # delta 1 = vol
    if j < 1 or j > d or k < 1:
        return PolynomialForm.zeros(cell, max(j - 1, 0), 0, shape=(0,))
    return independent_subset(_full_spanning(k, j, cell).codifferential())


def star_koszul_image(k, j, cell):
    """Independent spanning set of ``star kappa P_k Lambda^j``."""
    d = cell.d
    target = d - j + 1
    if k < 0 or j < 1 or j > d:
        return PolynomialForm.zeros(cell, min(max(target, 0), d), 0, shape=(0,))
    return independent_subset(_full_spanning(k, j, cell).koszul().hodge_star())


def interior_test_space(k, j, cell):
    """Basis of the interior moment space for ``Phi_k`` with problem index ``j``."""
    d = cell.d
    parts = [star_koszul_image(k - d - 2, d - j, cell), codifferential_image(k, j + 2, cell)]
    parts = [p for p in parts if len(p)]
    if not parts:
        return PolynomialForm.zeros(cell, j + 1, 0, shape=(0,))
    return independent_subset(PolynomialForm.stack(parts))


def dofs_Phi(k: int, j: int, cell: CellGeometry) -> list:
    """Vertex values, face moments and interior moments of ``Phi_k(T)``."""
    d, nv = cell.d, cell.d + 1
    if k < 1 or not 0 <= j <= d - 1:
        raise ValueError(f"unsupported Phi_{k} with j={j}")
    ncomp = comb(d, j + 1)
    dofs = [DofFunctional("vertex", (i,), c) for i in range(nv) for c in range(ncomp)]
    for ell in range(1, d):
        r = k - ell - 1
        if r < 0:
            continue
        for face in combinations(range(nv), ell + 1):
            for beta in _multi_indices(ell + 1, r):
                for c in range(ncomp):
                    dofs.append(DofFunctional("face", face, c, beta))
    q = interior_test_space(k, j, cell)
    for i in range(len(q)):
        dofs.append(DofFunctional("interior", tuple(range(nv)), 0, (i,), q[i]))
    return dofs


def _phi_candidates(k, j, cell):
    d, nv = cell.d, cell.d + 1
    ncomp = comb(d, j + 1)
    eye = np.eye(ncomp)
    funcs = []
    for alpha in _multi_indices(nv, k):
        if all(alpha):
            continue  # interior Bernstein polynomials are bubble multiples
        funcs.append(PolynomialForm.constant(cell, eye, j + 1).times_monomial(alpha))
    q = interior_test_space(k, j, cell)
    if len(q):
        funcs.append(q.times_bubble())
    return PolynomialForm.stack(funcs)


def vandermonde(dofs, forms: PolynomialForm):
    """``V[i, b] = dofs[i](forms[b])``."""
    return np.array([np.atleast_1d(f.apply(forms)) for f in dofs]).reshape(len(dofs), len(forms))


def space_Phi(k: int, j: int, cell: CellGeometry) -> ShapeBasis:
    """Basis of ``P_k Lambda^{j+1} + b_T delta P_k Lambda^{j+2}`` dual to :func:`dofs_Phi`."""
    dofs = dofs_Phi(k, j, cell)
    cand = _phi_candidates(k, j, cell)
    V = vandermonde(dofs, cand)
    if V.shape[0] != V.shape[1]:
        raise ValueError(f"DoF count {V.shape[0]} differs from shape space dimension {V.shape[1]}")
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond > 1e13:
        raise np.linalg.LinAlgError("rank deficient Vandermonde for Phi")
    basis = cand.combine(np.linalg.inv(V).T)
    keys = [f.key(cell.d + 1) for f in dofs]
    return ShapeBasis("phi", k, j + 1, cell, basis, keys, dofs=dofs, condition=cond)


@dataclass(frozen=True)
class UnisolvenceReport:
    """Outcome of a unisolvence check.

    ``condition`` is the condition number of the DoF/spanning-set matrix that
    was inverted to build the basis; ``dual_error`` is ``max |V - I|`` for the
    final basis.
    """

    ok: bool
    condition: float
    num_dofs: int
    dim: int
    dual_error: float = np.inf
    message: str = ""


def check_unisolvence(basis: ShapeBasis, dofs=None) -> UnisolvenceReport:
    """Check that the DoFs determine the shape space of ``basis`` uniquely."""
    dofs = basis.dofs if dofs is None else dofs
    if dofs is None:
        return UnisolvenceReport(False, np.inf, 0, basis.dim, message="basis carries no DoFs")
    dim = span_rank(basis.functions)
    if len(dofs) != dim:
        return UnisolvenceReport(False, np.inf, len(dofs), dim,
                                 message=f"{len(dofs)} DoFs for a space of dimension {dim}")
    V = vandermonde(dofs, basis.functions)
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond > 1e12:
        return UnisolvenceReport(False, cond, len(dofs), dim, message="singular Vandermonde")
    err = float(np.abs(V - np.eye(len(dofs))).max()) if V.shape[0] == V.shape[1] else np.inf
    return UnisolvenceReport(True, max(cond, basis.condition), len(dofs), dim, err)


def reference_cell(d: int) -> CellGeometry:
    return CellGeometry.from_vertices(np.vstack([np.zeros(d), np.eye(d)]))
