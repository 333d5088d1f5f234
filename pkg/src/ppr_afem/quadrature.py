"""Symmetric quadrature rules on the reference triangle.

Weights are normalized so that they sum to one; multiply by the element area
to integrate over a physical triangle.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points (n x 3) and normalized weights (n,)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def _orbit_a(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


def _orbit_ab(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return pts, [w] * 6


# (centroid weight or None, [(a, w)], [(a, b, w)]) keyed by exactness degree.
_TABLE = {
    1: (1.0, [], []),
    2: (None, [(1.0 / 6.0, 1.0 / 3.0)], []),
    4: (None, [(0.44594849091596483, 0.22338158967801136),
               (0.09157621350977076, 0.10995174365532195)], []),
    5: (0.225, [(0.10128650732345633, 0.12593918054482717),
                (0.47014206410511505, 0.13239415278850616)], []),
    6: (None, [(0.24928674517091434, 0.1167862757263733),
               (0.06308901449150153, 0.05084490637020574)],
        [(0.3103524510337814, 0.05314504984481945, 0.08285107561837714)]),
    8: (0.144315607677787, [(0.459292588292723, 0.095091634267285),
                            (0.17056930775176, 0.103217370534718),
                            (0.050547228317031, 0.032458497623198)],
        [(0.263112829634638, 0.008394777409958, 0.027230314174435)]),
}


def _tabulated(degree):
    centroid, a_orbits, ab_orbits = _TABLE[degree]
    pts, wts = [], []
    if centroid is not None:
        pts.append((1.0 / 3, 1.0 / 3, 1.0 / 3))
        wts.append(centroid)
    for a, w in a_orbits:
        p, q = _orbit_a(a, w)
        pts += p
        wts += q
    for a, b, w in ab_orbits:
        p, q = _orbit_ab(a, b, w)
        pts += p
        wts += q
    return np.array(pts), np.array(wts)


def _collapsed(degree):
    """Duffy-collapsed Gauss rule, symmetrized over the six vertex permutations."""
    # the Jacobian (1 - u) raises the degree in u by one
    n = (degree + 3) // 2
    s, ws = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    pts, wts = [], []
    for u, wu in zip(s, ws):
        for v, wv in zip(s, ws):
            x, y = u, (1.0 - u) * v
            pts.append((1.0 - x - y, x, y))
            wts.append(2.0 * wu * wv * (1.0 - u))
    base = np.array(pts)
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    points = np.vstack([base[:, list(p)] for p in perms])
    weights = np.tile(np.array(wts), 6) / 6.0
    return points, weights


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Return a symmetric rule with positive weights exact to ``degree``.

    Degrees 1..8 use tabulated Gaussian rules (1, 3, 6, 6, 7, 12, 16, 16
    points). Degrees 9 and 10 use a symmetrized collapsed Gauss rule.
    """
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= 10:
        raise ValueError(f"unsupported quadrature degree {degree!r}; expected 1..10")
    degree = int(degree)
    if degree <= 8:
        key = min(d for d in _TABLE if d >= degree)
        points, weights = _tabulated(key)
    else:
        points, weights = _collapsed(degree)
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(points, weights, degree)


@lru_cache(maxsize=None)
def gauss_line(n: int = 3):
    """Gauss-Legendre points on [0, 1] with weights summing to one."""
    s, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (s + 1.0), 0.5 * w
