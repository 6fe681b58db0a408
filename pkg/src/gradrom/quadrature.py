"""Quadrature rules and nodal Lagrange bases on the reference triangle.

The reference triangle has vertices (0, 0), (1, 0), (0, 1); triangle weights
sum to its area 1/2 and edge weights are for the unit interval.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class TriangleRule:
    points: np.ndarray   # (nqp, 2)
    weights: np.ndarray  # (nqp,)
    degree: int
    name: str


def _dunavant(degree):
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([1.0])
    if degree == 2:
        a, b = 1 / 6, 2 / 3
        return np.array([[a, a], [b, a], [a, b]]), np.full(3, 1 / 3)
    if degree <= 4:
        a1, b1, w1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
        a2, b2, w2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
        pts = [[a1, a1], [b1, a1], [a1, b1], [a2, a2], [b2, a2], [a2, b2]]
        return np.array(pts), np.array([w1] * 3 + [w2] * 3)
    return None


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> TriangleRule:
    """Rule exact for polynomials up to ``degree`` on the reference triangle.

    Dunavant rules are used up to degree 4; higher degrees use the collapsed
    (Stroud conical product) Gauss-Jacobi x Gauss-Legendre construction.
    """
    tab = _dunavant(degree)
    if tab is not None:
        pts, w = tab
        # Dunavant tables are normalized to unit total weight; the last digit
        # of the 15-digit constants is not exact, so renormalize.
        return TriangleRule(pts, 0.5 * w / w.sum(), degree, f"dunavant-{degree}")
    n = (degree + 2) // 2
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (1.0 + xj)          # collapsed direction, weight (1 - s)
    t = 0.5 * (1.0 + xl)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(0.25 * wj, 0.5 * wl)
    pts = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
    return TriangleRule(pts, W.ravel(), degree, f"conical-{degree}")


@lru_cache(maxsize=None)
def edge_rule(degree: int):
    """Gauss-Legendre points/weights on [0, 1] exact up to ``degree``."""
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def local_dimension(q: int) -> int:
    return (q + 1) * (q + 2) // 2


def lagrange_nodes(q: int) -> np.ndarray:
    if q == 1:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if q == 2:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
                         [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    raise ValueError(f"unsupported polynomial degree {q}")


def lagrange_basis(q: int, pts: np.ndarray):
    """Values (..., n_q) and reference gradients (..., n_q, 2) at ``pts``."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if q == 1:
        vals = np.stack([l0, l1, l2], axis=-1)
        grads = np.broadcast_to(dl, x.shape + (3, 2)).copy()
        return vals, grads
    if q == 2:
        lam = (l0, l1, l2)
        vals = [lam[i] * (2.0 * lam[i] - 1.0) for i in range(3)]
        grads = [(4.0 * lam[i] - 1.0)[..., None] * dl[i] for i in range(3)]
        for i, j in ((0, 1), (1, 2), (2, 0)):
            vals.append(4.0 * lam[i] * lam[j])
            grads.append(4.0 * (lam[j][..., None] * dl[i] + lam[i][..., None] * dl[j]))
        return np.stack(vals, axis=-1), np.stack(grads, axis=-2)
    raise ValueError(f"unsupported polynomial degree {q}")
