"""Exterior algebra on R^d with the standard orthonormal basis.

Basis j-forms ``dx_sigma`` are labelled by strictly increasing index tuples
``sigma`` (zero-based internally).  Coefficient arrays of an element of
``Alt^j R^d`` are ordered lexicographically, matching
``itertools.combinations(range(d), j)``.

Every sign in this module comes from :func:`sort_with_sign`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

MAX_DIM = 4


def sort_with_sign(seq):
    """Sort ``seq`` and return ``(sorted_tuple, parity)``.

    The parity is ``+1`` for an even sorting permutation, ``-1`` for an odd one
    and ``0`` if ``seq`` has a repeated entry.
    """
    items = list(seq)
    sign = 1
    # insertion sort; inputs are at most a handful of entries long
    for i in range(1, len(items)):
        k = i
        while k > 0 and items[k - 1] > items[k]:
            items[k - 1], items[k] = items[k], items[k - 1]
            sign = -sign
            k -= 1
    for a, b in zip(items, items[1:]):
        if a == b:
            return tuple(items), 0
    return tuple(items), sign


@dataclass(frozen=True)
class IncreasingIndex:
    """A strictly increasing index tuple together with a permutation parity."""

    entries: tuple
    sign: int = 1

    @classmethod
    def from_sequence(cls, seq) -> "IncreasingIndex":
        entries, sign = sort_with_sign(seq)
        return cls(entries, sign)

    def __len__(self):
        return len(self.entries)


@lru_cache(maxsize=None)
def index_sets(d: int, j: int) -> tuple:
    """Increasing index tuples labelling the basis of ``Alt^j R^d``."""
    if j < 0 or j > d:
        return ()
    return tuple(combinations(range(d), j))


@lru_cache(maxsize=None)
def index_lookup(d: int, j: int) -> dict:
    return {s: i for i, s in enumerate(index_sets(d, j))}


def _check_dim(d, j):
    if d < 1 or d > MAX_DIM:
        raise ValueError(f"ambient dimension must be in 1..{MAX_DIM}, got {d}")
    if j < 0 or j > d:
        raise ValueError(f"form degree {j} out of range for d={d}")


@lru_cache(maxsize=None)
def wedge_tensor(d: int, i: int, j: int) -> np.ndarray:
    """Structure constants ``W[a, b, c]`` with ``e_a ^ e_b = sum_c W[a,b,c] e_c``."""
    if i + j > d:
        raise ValueError(f"degree overflow: {i} + {j} > {d}")
    W = np.zeros((comb(d, i), comb(d, j), comb(d, i + j)))
    look = index_lookup(d, i + j)
    for a, sa in enumerate(index_sets(d, i)):
        for b, sb in enumerate(index_sets(d, j)):
            merged, sign = sort_with_sign(sa + sb)
            if sign:
                W[a, b, look[merged]] = sign
    W.setflags(write=False)
    return W


@lru_cache(maxsize=None)
def hodge_matrix(d: int, j: int) -> np.ndarray:
    """Matrix of the Hodge star ``Alt^j -> Alt^{d-j}`` in the canonical bases.

    ``*dx_sigma = s dx_{sigma^c}`` where ``dx_sigma ^ dx_{sigma^c} = s vol``.
    """
    H = np.zeros((comb(d, d - j), comb(d, j)))
    look = index_lookup(d, d - j)
    for a, s in enumerate(index_sets(d, j)):
        comp = tuple(i for i in range(d) if i not in s)
        _, sign = sort_with_sign(s + comp)
        H[look[comp], a] = sign
    H.setflags(write=False)
    return H


@lru_cache(maxsize=None)
def contraction_tensor(d: int, j: int) -> np.ndarray:
    """``K[m, a, b]``: contraction of ``dx_sigma_a`` with ``e_m`` gives ``sum_b K e_b``.

    ``e_m ⌟ dx_{s_0} ^ ... ^ dx_{s_{j-1}} = sum_i (-1)^i delta_{m s_i} dx_{s without s_i}``.
    """
    K = np.zeros((d, comb(d, j), comb(d, j - 1)))
    look = index_lookup(d, j - 1)
    for a, s in enumerate(index_sets(d, j)):
        for i, m in enumerate(s):
            K[m, a, look[s[:i] + s[i + 1:]]] += (-1) ** i
    K.setflags(write=False)
    return K


def minors(G: np.ndarray, rows, j: int) -> np.ndarray:
    """Cartesian coefficients of ``dl_{r_0} ^ ... ^ dl_{r_{j-1}}`` for 1-forms ``dl_r = G[r]``.

    ``G`` may carry leading batch axes: shape ``(..., n, d)``.  Returns shape
    ``(..., C(d, j))``.
    """
    G = np.asarray(G, dtype=float)
    d = G.shape[-1]
    rows = list(rows)
    if j == 0:
        return np.ones(G.shape[:-2] + (1,))
    sub = G[..., rows, :]
    out = np.empty(G.shape[:-2] + (comb(d, j),))
    for b, s in enumerate(index_sets(d, j)):
        out[..., b] = np.linalg.det(sub[..., :, list(s)]) if j > 1 else sub[..., 0, s[0]]
    return out


@dataclass(frozen=True, eq=False)
class AlternatingForm:
    """An element of ``Alt^j R^d`` stored by its coefficients on ``dx_sigma``."""

    d: int
    j: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_dim(self.d, self.j)
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size != comb(self.d, self.j):
            raise ValueError(
                f"Alt^{self.j} R^{self.d} needs {comb(self.d, self.j)} coefficients, got {c.size}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, d, j):
        return cls(d, j, np.zeros(comb(d, j)))

    @classmethod
    def basis(cls, d, sigma) -> "AlternatingForm":
        """``dx_{sigma}`` for an arbitrary index sequence (sign from sorting)."""
        entries, sign = sort_with_sign(sigma)
        j = len(entries)
        c = np.zeros(comb(d, j))
        if sign:
            c[index_lookup(d, j)[entries]] = sign
        return cls(d, j, c)

    @classmethod
    def volume(cls, d):
        return cls(d, d, np.ones(1))

    @classmethod
    def from_dict(cls, d, j, mapping) -> "AlternatingForm":
        """Build from ``{zero-based index sequence: coefficient}``."""
        out = cls.zero(d, j)
        for sigma, value in mapping.items():
            out = out + value * cls.basis(d, sigma)
        return out

    def _same_space(self, other):
        if not isinstance(other, AlternatingForm):
            return NotImplemented
        if (self.d, self.j) != (other.d, other.j):
            raise ValueError("forms live in different spaces")
        return True

    def __add__(self, other):
        if self._same_space(other) is NotImplemented:
            return NotImplemented
        return AlternatingForm(self.d, self.j, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if self._same_space(other) is NotImplemented:
            return NotImplemented
        return AlternatingForm(self.d, self.j, self.coeffs - other.coeffs)

    def __neg__(self):
        return AlternatingForm(self.d, self.j, -self.coeffs)

    def __mul__(self, scalar):
        return AlternatingForm(self.d, self.j, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def __xor__(self, other):
        return wedge(self, other)

    def __call__(self, *vectors):
        """Evaluate on ``j`` vectors of R^d."""
        if len(vectors) != self.j:
            raise ValueError(f"a {self.j}-form takes {self.j} vectors")
        if self.j == 0:
            return float(self.coeffs[0])
        V = np.array(vectors, dtype=float).T
        return float(sum(c * np.linalg.det(V[list(s), :])
                         for c, s in zip(self.coeffs, index_sets(self.d, self.j))))

    def allclose(self, other, atol=1e-12):
        return (self.d, self.j) == (other.d, other.j) and np.allclose(
            self.coeffs, other.coeffs, atol=atol, rtol=0)

    def as_dict(self):
        """Nonzero coefficients keyed by one-based index tuples."""
        return {tuple(i + 1 for i in s): float(c)
                for s, c in zip(index_sets(self.d, self.j), self.coeffs) if c != 0.0}


def wedge(a: AlternatingForm, b: AlternatingForm) -> AlternatingForm:
    """Exterior product ``a ^ b``."""
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    if a.j + b.j > a.d:
        raise ValueError(f"degree overflow: {a.j} + {b.j} > {a.d}")
    W = wedge_tensor(a.d, a.j, b.j)
    return AlternatingForm(a.d, a.j + b.j, np.einsum("a,b,abc->c", a.coeffs, b.coeffs, W))


def hodge_star(a: AlternatingForm) -> AlternatingForm:
    """Hodge star for the standard orientation of R^d."""
    return AlternatingForm(a.d, a.d - a.j, hodge_matrix(a.d, a.j) @ a.coeffs)


def inverse_hodge_star(a: AlternatingForm) -> AlternatingForm:
    sign = (-1) ** (a.j * (a.d - a.j))
    return sign * hodge_star(a)


def alt_inner(a: AlternatingForm, b: AlternatingForm) -> float:
    """Inner product induced on ``Alt^j`` by the Euclidean inner product."""
    if (a.d, a.j) != (b.d, b.j):
        raise ValueError(f"degree mismatch: Alt^{a.j}R^{a.d} vs Alt^{b.j}R^{b.d}")
    return float(a.coeffs @ b.coeffs)


def interior_product(vector, a: AlternatingForm) -> AlternatingForm:
    """Contraction ``v ⌟ a``."""
    if a.j == 0:
        raise ValueError("cannot contract a 0-form")
    K = contraction_tensor(a.d, a.j)
    return AlternatingForm(a.d, a.j - 1, np.einsum("m,a,mab->b", np.asarray(vector, float), a.coeffs, K))


def koszul(p, origin=None):
    """Koszul operator of a polynomial form (contraction with ``x - origin``).

    Dispatches to :meth:`decoupled_feec.polyforms.PolynomialForm.koszul`; the
    origin defaults to the barycenter of the form's simplex.
    """
    if p.j == 0:
        raise ValueError("the Koszul operator is undefined on 0-forms")
    return p.koszul(origin)
