"""Quadrature on the reference tetrahedron and triangle.

Up to degree 5 (tetrahedron) and 4 (triangle) the rules are fully
symmetric, so the result does not depend on how a cell lists its
vertices.  Higher orders fall back to collapsed-coordinate Gauss rules.
Weights are normalised to sum to one, so an integral over a simplex is
``volume * sum(w * f(points))``.  Points are returned in barycentric form.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def _jacobi01(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jacobi nodes on [0, 1] for the weight (1 - s)**alpha."""
    if alpha == 0:
        x, w = roots_legendre(n)
    else:
        x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w * 0.5 ** (alpha + 1)


def _orbit(p) -> np.ndarray:
    return np.array(sorted(set(itertools.permutations(p))), dtype=float)


def _symmetric(orbits) -> tuple[np.ndarray, np.ndarray]:
    pts = [_orbit(p) for p, _ in orbits]
    w = np.concatenate([np.full(len(o), wt) for o, (_, wt) in zip(pts, orbits)])
    bary = np.vstack(pts)
    w = w / w.sum()
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w


# 14-point degree-5 rule with positive weights
_TET5 = ((0.0927352503108912, 0.01224884051939366),
         (0.3108859192633006, 0.01878132095300264))
_TET5_EDGE = (0.4544962958743504, 0.007091003462846911)
# 6-point degree-4 rule
_TRI4 = ((0.445948490915965, 0.223381589678011),
         (0.091576213509771, 0.109951743655322))


@lru_cache(maxsize=None)
def tet_rule(order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(bary, weights)`` exact for polynomials of total degree ``order``.

    bary has shape (nq, 4).  Orders up to 5 use a symmetric 14-point rule;
    above that a conical (Duffy) product of Gauss-Jacobi rules with
    ``n = ceil((order + 1) / 2)`` points per axis.
    """
    if order <= 5:
        c, wc = _TET5_EDGE
        return _symmetric([((a, a, a, 1 - 3 * a), w) for a, w in _TET5]
                          + [((c, c, 0.5 - c, 0.5 - c), wc)])
    n = max(1, int(np.ceil((order + 1) / 2)))
    s1, w1 = _jacobi01(n, 2)
    s2, w2 = _jacobi01(n, 1)
    s3, w3 = _jacobi01(n, 0)
    a, b, c = np.meshgrid(s1, s2, s3, indexing="ij")
    wa, wb, wc = np.meshgrid(w1, w2, w3, indexing="ij")
    u = a.ravel()
    v = ((1 - a) * b).ravel()
    w = ((1 - a) * (1 - b) * c).ravel()
    weights = (wa * wb * wc).ravel()
    weights = weights / weights.sum()
    bary = np.column_stack([1.0 - u - v - w, u, v, w])
    bary.setflags(write=False)
    weights.setflags(write=False)
    return bary, weights


@lru_cache(maxsize=None)
def tri_rule(order: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Triangle analogue of :func:`tet_rule`; bary has shape (nq, 3)."""
    if order <= 4:
        return _symmetric([((a, a, 1 - 2 * a), w) for a, w in _TRI4])
    n = max(1, int(np.ceil((order + 1) / 2)))
    s1, w1 = _jacobi01(n, 1)
    s2, w2 = _jacobi01(n, 0)
    a, b = np.meshgrid(s1, s2, indexing="ij")
    wa, wb = np.meshgrid(w1, w2, indexing="ij")
    u = a.ravel()
    v = ((1 - a) * b).ravel()
    weights = (wa * wb).ravel()
    weights = weights / weights.sum()
    bary = np.column_stack([1.0 - u - v, u, v])
    bary.setflags(write=False)
    weights.setflags(write=False)
    return bary, weights


def gauss_legendre_panels(a: float, b: float, panels: int, npts: int = 3):
    """Composite Gauss-Legendre nodes and weights on [a, b]."""
    x, w = roots_legendre(npts)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights
