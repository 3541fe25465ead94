"""Collapsed Gauss-Jacobi rules on the reference simplex."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class SimplexRule:
    """Quadrature rule in barycentric coordinates.

    ``weights`` sum to one, so ``sum(w * f) * |T|`` approximates the integral
    over any simplex ``T``.
    """

    bary: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def num_points(self):
        return self.weights.size


@lru_cache(maxsize=None)
def simplex_rule(d: int, degree: int) -> SimplexRule:
    """Conical product rule exact for polynomials of total degree ``degree``."""
    m = degree // 2 + 1
    nodes, weights = [], []
    for axis in range(d):
        a = d - 1 - axis  # Duffy Jacobian power in this direction
        x, w = roots_jacobi(m, a, 0)
        nodes.append((1.0 + x) / 2.0)
        weights.append(w / 2.0 ** (a + 1))
    grids = np.meshgrid(*nodes, indexing="ij")
    wgrid = np.ones_like(grids[0])
    for axis, w in enumerate(weights):
        shape = [1] * d
        shape[axis] = -1
        wgrid = wgrid * w.reshape(shape)
    t = [g.ravel() for g in grids]
    pts = np.zeros((t[0].size, d))
    remaining = np.ones_like(t[0])
    for axis in range(d):
        pts[:, axis] = remaining * t[axis]
        remaining = remaining * (1.0 - t[axis])
    w = wgrid.ravel()
    w = w / w.sum()
    bary = np.concatenate([1.0 - pts.sum(axis=1, keepdims=True), pts], axis=1)
    return SimplexRule(bary, w, degree)
