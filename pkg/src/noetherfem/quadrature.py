"""Quadrature rules on the reference triangle and the reference edge.

The reference triangle is ``{(x, y) : x, y >= 0, x + y <= 1}`` (area 1/2) and
the reference edge is ``[0, 1]``. Triangle points are stored in barycentric
coordinates ``(l0, l1, l2)`` with ``l1 = x`` and ``l2 = y``.

Degrees 1, 2 and 5 use classical symmetric rules. Every other degree uses
the collapsed (Duffy) product of Gauss-Jacobi and Gauss-Legendre points,
which has strictly positive weights and interior points for any degree.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 12


class UnsupportedDegreeError(ValueError):
    """Raised when a rule of the requested degree is not available."""


@dataclass(frozen=True)
class QuadRule:
    """A fixed quadrature rule.

    Attributes
    ----------
    points : ndarray
        ``(nq, 3)`` barycentric points for triangles, ``(nq,)`` parameters
        in ``[0, 1]`` for edges.
    weights : ndarray
        ``(nq,)`` weights summing to the reference measure.
    exact_degree : int
        Polynomials of total degree up to this value are integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    @property
    def ref_points(self) -> np.ndarray:
        """Cartesian reference coordinates ``(nq, 2)`` of a triangle rule."""
        return self.points[:, 1:3]

    def __len__(self) -> int:
        return len(self.weights)


def _check_degree(degree: int) -> int:
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= MAX_DEGREE:
        raise UnsupportedDegreeError(
            f"quadrature degree must be an integer in [1, {MAX_DEGREE}], got {degree!r}"
        )
    return int(degree)


def _symmetric_orbits(orbits):
    pts, wts = [], []
    for kind, a, w in orbits:
        if kind == "centroid":
            pts.append((1 / 3, 1 / 3, 1 / 3))
            wts.append(w)
        else:
            b = 1.0 - 2.0 * a
            for p in ((b, a, a), (a, b, a), (a, a, b)):
                pts.append(p)
                wts.append(w)
    return np.array(pts), 0.5 * np.array(wts)


def _collapsed_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    n = (degree + 2) // 2
    # x in [0,1] carries the (1 - x) Jacobian of the collapse
    xa, wa = roots_jacobi(n, 1.0, 0.0)
    xb, wb = np.polynomial.legendre.leggauss(n)
    xa = 0.5 * (xa + 1.0)
    wa = 0.25 * wa
    xb = 0.5 * (xb + 1.0)
    wb = 0.5 * wb
    X, Y = np.meshgrid(xa, xb, indexing="ij")
    W = np.outer(wa, wb)
    x = X.ravel()
    y = (Y * (1.0 - X)).ravel()
    pts = np.column_stack([1.0 - x - y, x, y])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    """Return a positive-weight rule on the reference triangle exact to ``degree``."""
    degree = _check_degree(degree)
    if degree == 1:
        pts, wts = _symmetric_orbits([("centroid", None, 1.0)])
    elif degree == 2:
        pts, wts = _symmetric_orbits([("orbit", 1 / 6, 1 / 3)])
    elif degree == 5:
        r = np.sqrt(15.0)
        pts, wts = _symmetric_orbits(
            [
                ("centroid", None, 9 / 40),
                ("orbit", (6 - r) / 21, (155 - r) / 1200),
                ("orbit", (6 + r) / 21, (155 + r) / 1200),
            ]
        )
    else:
        pts, wts = _collapsed_rule(degree)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(pts, wts, degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadRule:
    """Gauss-Legendre rule on ``[0, 1]`` exact to ``degree``."""
    degree = _check_degree(degree)
    n = (degree + 2) // 2
    t, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    t.setflags(write=False)
    w.setflags(write=False)
    return QuadRule(t, w, degree)


def volume_degree(k: int) -> int:
    """Default rule degree for nonlinear volume forms with P_k functions."""
    return min(2 * k + 3, MAX_DEGREE)


def face_degree(k: int) -> int:
    """Default rule degree for skeleton integrals with P_k functions."""
    return min(2 * k + 2, MAX_DEGREE)


def error_degree(k: int) -> int:
    """Rule degree for non-polynomial error integrands."""
    return min(2 * k + 4, MAX_DEGREE)
