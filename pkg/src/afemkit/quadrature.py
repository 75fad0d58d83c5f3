"""Fixed symmetric quadrature rules on the reference triangle and edges.

Triangle rules are exact to degree 4 (used for p=1) and degree 6 (p=2),
so every integrand appearing in assembly of degree-p spaces with
element-constant coefficients is integrated exactly (degree <= 2p + 2).
Points are given in barycentric-free reference coordinates (x, y) on the
triangle with vertices (0,0), (1,0), (0,1); weights sum to 1/2.
"""

from __future__ import annotations

import numpy as np

# Dunavant degree-4 rule, 6 points.
_D4_A = 0.445948490915965
_D4_B = 0.091576213509771
_W4_A = 0.223381589678011
_W4_B = 0.109951743655322

TRI_DEG4_POINTS = np.array(
    [
        [_D4_A, _D4_A],
        [1.0 - 2.0 * _D4_A, _D4_A],
        [_D4_A, 1.0 - 2.0 * _D4_A],
        [_D4_B, _D4_B],
        [1.0 - 2.0 * _D4_B, _D4_B],
        [_D4_B, 1.0 - 2.0 * _D4_B],
    ]
)
TRI_DEG4_WEIGHTS = 0.5 * np.array([_W4_A] * 3 + [_W4_B] * 3)

# Dunavant degree-6 rule, 12 points.
_D6_A = 0.063089014491502
_D6_B = 0.249286745170910
_D6_C = 0.310352451033785
_D6_D = 0.053145049844816
_W6_A = 0.050844906370207
_W6_B = 0.116786275726379
_W6_C = 0.082851075618374


def _sym3(a: float) -> list[list[float]]:
    return [[a, a], [1.0 - 2.0 * a, a], [a, 1.0 - 2.0 * a]]


def _sym6(a: float, b: float) -> list[list[float]]:
    c = 1.0 - a - b
    return [[a, b], [b, a], [a, c], [c, a], [b, c], [c, b]]


TRI_DEG6_POINTS = np.array(_sym3(_D6_A) + _sym3(_D6_B) + _sym6(_D6_C, _D6_D))
TRI_DEG6_WEIGHTS = 0.5 * np.array([_W6_A] * 3 + [_W6_B] * 3 + [_W6_C] * 6)


def triangle_rule(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference-triangle rule exact to degree 2p + 2."""
    if p == 1:
        return TRI_DEG4_POINTS, TRI_DEG4_WEIGHTS
    if p == 2:
        return TRI_DEG6_POINTS, TRI_DEG6_WEIGHTS
    raise ValueError(f"unsupported degree {p}")


def edge_rule(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points/weights on [0, 1] (exact to degree 2*npts-1)."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w
