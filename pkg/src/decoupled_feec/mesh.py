"""Simplicial meshes of the unit box built from Kuhn (Freudenthal) subdivisions."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, permutations
from math import factorial, sqrt

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class CellGeometry:
    """Affine data of one simplex.

    Attributes
    ----------
    vertices : (d+1, d) array
    grad_bary : (d+1, d) array
        Gradients of the barycentric coordinates.
    volume : float
    diameter : float
    """

    vertices: np.ndarray
    grad_bary: np.ndarray = field(repr=False)
    volume: float
    diameter: float

    @classmethod
    def from_vertices(cls, vertices) -> "CellGeometry":
        V = np.array(vertices, dtype=float)
        d = V.shape[1]
        if V.shape != (d + 1, d):
            raise ValueError(f"a {d}-simplex needs {d + 1} vertices, got shape {V.shape}")
        E = (V[1:] - V[0]).T  # columns are edge vectors
        det = np.linalg.det(E)
        if abs(det) < 1e-300:
            raise ValueError("degenerate simplex")
        Einv = np.linalg.inv(E)
        G = np.empty((d + 1, d))
        G[1:] = Einv
        G[0] = -Einv.sum(axis=0)
        diam = max(np.linalg.norm(V[a] - V[b]) for a, b in combinations(range(d + 1), 2))
        return cls(V, G, abs(det) / factorial(d), diam)

    @property
    def d(self):
        return self.vertices.shape[1]

    def to_cartesian(self, bary):
        """Map barycentric points ``(..., d+1)`` to Cartesian ``(..., d)``."""
        return np.asarray(bary) @ self.vertices

    def to_barycentric(self, x):
        x = np.asarray(x, dtype=float)
        lam = (x - self.vertices[0]) @ self.grad_bary[1:].T
        return np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)

    @property
    def barycenter(self):
        return self.vertices.mean(axis=0)


@dataclass(frozen=True)
class Subsimplices:
    """All ``ell``-dimensional subsimplices with their cell incidence."""

    ell: int
    vertices: np.ndarray
    boundary: np.ndarray
    incidence: sp.csr_matrix = field(repr=False)

    def __len__(self):
        return self.vertices.shape[0]

    @property
    def interior(self):
        return np.flatnonzero(~self.boundary)

    def incident_cells(self, index):
        row = self.incidence.getrow(index)
        return row.indices.copy()


def _encode(rows, base):
    key = np.zeros(rows.shape[0], dtype=np.int64)
    for c in range(rows.shape[1]):
        key = key * base + rows[:, c].astype(np.int64)
    return key


class SimplicialMesh:
    """Conforming simplicial mesh with sorted subsimplex tables.

    Parameters
    ----------
    vertices : (nv, d) array
    cells : (nc, d+1) int array
        Cells are reordered on construction so that every cell has positive
        signed volume.
    n : int, optional
        Subdivisions per axis when generated by :func:`box_mesh`.
    """

    def __init__(self, vertices, cells, n=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        self.d = self.vertices.shape[1]
        if cells.shape[1] != self.d + 1:
            raise ValueError("cell arity does not match dimension")
        vol = self._signed_volumes(cells)
        flip = vol < 0
        if np.any(flip):
            cells[flip, -2], cells[flip, -1] = cells[flip, -1].copy(), cells[flip, -2].copy()
        self.cells = cells
        self.cells_sorted = np.sort(cells, axis=1)
        self.n = n
        self._faces = {}
        self._cell_faces = {}
        self._build_faces()

    def _signed_volumes(self, cells):
        P = self.vertices[cells]
        E = P[:, 1:, :] - P[:, :1, :]
        return np.linalg.det(E) / factorial(self.d)

    def signed_volumes(self):
        return self._signed_volumes(self.cells)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    def _build_faces(self):
        d = self.d
        for ell in range(d):
            local = list(combinations(range(d + 1), ell + 1))
            rows = self.cells_sorted[:, local].reshape(-1, ell + 1)
            # integer keys preserve lexicographic order of the sorted rows
            _, first, inverse = np.unique(_encode(rows, self.num_vertices),
                                          return_index=True, return_inverse=True)
            faces = rows[first]
            self._faces[ell] = faces
            self._cell_faces[ell] = inverse.reshape(self.num_cells, len(local))
        self._cell_faces[d] = np.arange(self.num_cells).reshape(-1, 1)
        self._faces[d] = self.cells_sorted

        facet_count = np.bincount(self._cell_faces[d - 1].ravel(), minlength=len(self._faces[d - 1]))
        if facet_count.max() > 2:
            raise ValueError("non-manifold mesh: a facet is shared by more than two cells")
        bfacets = self._faces[d - 1][facet_count == 1]
        self._boundary = {d - 1: facet_count == 1, d: np.zeros(self.num_cells, dtype=bool)}
        base = self.num_vertices
        for ell in range(d - 1):
            sub = np.unique(bfacets[:, list(combinations(range(d), ell + 1))].reshape(-1, ell + 1), axis=0)
            keys = _encode(self._faces[ell], base)
            flags = np.zeros(len(keys), dtype=bool)
            flags[np.searchsorted(keys, _encode(sub, base))] = True
            self._boundary[ell] = flags

    def faces(self, ell):
        """Sorted vertex lists of the ``ell``-subsimplices (lexicographic order)."""
        self._check_ell(ell, allow_cells=True)
        return self._faces[ell]

    def cell_faces(self, ell):
        """``(nc, C(d+1, ell+1))`` global ids of the local ``ell``-faces.

        Local faces are enumerated as ``itertools.combinations`` of the
        positions in ``cells_sorted``.
        """
        self._check_ell(ell, allow_cells=True)
        return self._cell_faces[ell]

    def cell_face_signs(self, ell):
        """Relative orientation of local and global faces (always +1 with sorted storage)."""
        return np.ones_like(self._cell_faces[ell], dtype=np.int8)

    def boundary_flags(self, ell):
        self._check_ell(ell, allow_cells=True)
        return self._boundary[ell]

    def _check_ell(self, ell, allow_cells=False):
        top = self.d if allow_cells else self.d - 1
        if not 0 <= ell <= top:
            raise ValueError(f"subsimplex dimension {ell} out of range 0..{top}")

    def subsimplices(self, ell) -> Subsimplices:
        return subsimplices(self, ell)

    @cached_property
    def h(self):
        """Maximal cell diameter."""
        P = self.vertices[self.cells]
        diam = np.zeros(self.num_cells)
        for a, b in combinations(range(self.d + 1), 2):
            diam = np.maximum(diam, np.linalg.norm(P[:, a] - P[:, b], axis=1))
        return float(diam.max())

    @cached_property
    def volume(self):
        return float(self.signed_volumes().sum())

    def cell_geometry(self, c) -> CellGeometry:
        """Geometry of cell ``c`` with vertices in sorted-id order."""
        return CellGeometry.from_vertices(self.vertices[self.cells_sorted[c]])

    @cached_property
    def _classes(self):
        P = self.vertices[self.cells_sorted]
        offsets = (P[:, 1:, :] - P[:, :1, :]).reshape(self.num_cells, -1)
        scale = 1.0 / max(self.h, 1e-300)
        key = np.round(offsets * scale * 1e8).astype(np.int64)
        _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
        return inverse.ravel(), first

    @property
    def cell_class(self):
        """Translation-class label of each cell (cells in a class are translates)."""
        return self._classes[0]

    @property
    def class_representatives(self):
        return self._classes[1]

    @property
    def num_classes(self):
        return len(self._classes[1])

    def class_geometry(self, cls) -> CellGeometry:
        return self.cell_geometry(self.class_representatives[cls])

    def euler_characteristic(self):
        return sum((-1) ** ell * len(self._faces[ell]) for ell in range(self.d + 1))

    def translated(self, shift) -> "SimplicialMesh":
        return SimplicialMesh(self.vertices + np.asarray(shift, float), self.cells, n=self.n)

    def dump(self, path):
        """Write ``d nv nc`` followed by coordinates and zero-based cells."""
        with open(path, "w") as fh:
            fh.write(f"{self.d} {self.num_vertices} {self.num_cells}\n")
            for x in self.vertices:
                fh.write(" ".join(repr(float(v)) for v in x) + "\n")
            for c in self.cells:
                fh.write(" ".join(str(int(v)) for v in c) + "\n")

    @classmethod
    def load(cls, path) -> "SimplicialMesh":
        with open(path) as fh:
            d, nv, nc = (int(t) for t in fh.readline().split())
            verts = np.array([[float(t) for t in fh.readline().split()] for _ in range(nv)])
            cells = np.array([[int(t) for t in fh.readline().split()] for _ in range(nc)])
        if verts.shape != (nv, d):
            raise ValueError("malformed mesh dump")
        return cls(verts, cells)


def box_mesh(d: int, n: int) -> SimplicialMesh:
    """Kuhn triangulation of ``[0, 1]^d`` with ``n`` subdivisions per axis.

    Each subcube is split into ``d!`` simplices sharing the diagonal from its
    lowest to its highest corner.  Vertex ``(i_1, ..., i_d)`` gets id
    ``sum_m i_m (n+1)^(m-1)``.
    """
    if d not in (2, 3):
        raise ValueError(f"box meshes are available for d in (2, 3), got {d}")
    if n < 1:
        raise ValueError("n must be positive")
    ticks = np.linspace(0.0, 1.0, n + 1)
    grids = np.meshgrid(*([ticks] * d), indexing="ij")
    # id = i_1 + (n+1) i_2 + ..., so x_1 varies fastest
    vertices = np.stack([g.ravel(order="F") for g in grids], axis=1)
    stride = (n + 1) ** np.arange(d)
    corners = np.stack(np.meshgrid(*([np.arange(n)] * d), indexing="ij"), -1).reshape(-1, d)
    base = corners @ stride
    cells = []
    for perm in permutations(range(d)):
        path = [base]
        cur = base
        for axis in perm:
            cur = cur + stride[axis]
            path.append(cur)
        cells.append(np.stack(path, axis=1))
    cells = np.concatenate(cells, axis=0)
    return SimplicialMesh(vertices, cells, n=n)


def refine_uniform(mesh: SimplicialMesh) -> SimplicialMesh:
    """Uniform refinement of a box mesh (halves ``h``)."""
    if mesh.n is None:
        raise ValueError("refinement is only defined for meshes built by box_mesh")
    return box_mesh(mesh.d, 2 * mesh.n)


def subsimplices(mesh: SimplicialMesh, ell: int) -> Subsimplices:
    """Table of ``ell``-subsimplices with boundary flags and incident cells."""
    mesh._check_ell(ell)
    faces = mesh.faces(ell)
    cf = mesh.cell_faces(ell)
    rows = cf.ravel()
    cols = np.repeat(np.arange(mesh.num_cells), cf.shape[1])
    inc = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)),
                        shape=(len(faces), mesh.num_cells))
    return Subsimplices(ell, faces, mesh.boundary_flags(ell), inc)


def mesh_size(d: int, n: int) -> float:
    return sqrt(d) / n
