"""Quadrature on the reference triangle and on time slabs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadRule:
    """Symmetric rule in barycentric coordinates.

    Weights are normalised to sum to one, so an integral over a triangle
    ``K`` is ``|K| * sum(w * f(points))``.
    """

    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)
    degree: int


def _orbit_s21(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit_s111(a: float, b: float) -> list[tuple[float, float, float]]:
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def dunavant6() -> QuadRule:
    """12-point rule exact for polynomials of degree 6 (Dunavant, 1985)."""
    pts: list[tuple[float, float, float]] = []
    wts: list[float] = []
    for a, w in ((0.063089014491502, 0.050844906370207),
                 (0.249286745170910, 0.116786275726379)):
        orbit = _orbit_s21(a)
        pts += orbit
        wts += [w] * len(orbit)
    orbit = _orbit_s111(0.053145049844817, 0.310352451033784)
    pts += orbit
    wts += [0.082851075618374] * len(orbit)
    weights = np.array(wts)
    return QuadRule(np.array(pts), weights / weights.sum(), 6)


def gauss_legendre_unit(m: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[0, 1]`` (weights sum to 1)."""
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


# The single spatial rule shared by assembly and every discrete functional.
DEFAULT_RULE = dunavant6()
