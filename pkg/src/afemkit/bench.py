"""Benchmark problem registry: meshes, coefficients and reference data.

All initial meshes are aligned with the discontinuities of their
problem data (coefficient jumps, the goal subdomain boundary), so the
element-wise-constant coefficient evaluation in assembly and estimation
is exact on every refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import StructureError
from .fespace import ProblemSpec
from .mesh import DIRICHLET, NEUMANN, Mesh, initial_mesh

# ---------------------------------------------------------------------------
# mesh constructors
# ---------------------------------------------------------------------------


def _grid_cells(lo: float, hi: float, n: int):
    xs = np.linspace(lo, hi, n + 1)
    return xs


def crisscross_square(lo: float = -1.0, hi: float = 1.0, n: int = 4) -> Mesh:
    """n x n criss-cross pattern: each cell split into 4 by its center."""
    xs = _grid_cells(lo, hi, n)
    coords = [(x, y) for y in xs for x in xs]
    index = {(i, j): j * (n + 1) + i for j in range(n + 1) for i in range(n + 1)}
    tris = []
    for j in range(n):
        for i in range(n):
            cx, cy = 0.5 * (xs[i] + xs[i + 1]), 0.5 * (xs[j] + xs[j + 1])
            c = len(coords)
            coords.append((cx, cy))
            bl, br = index[(i, j)], index[(i + 1, j)]
            tl, tr = index[(i, j + 1)], index[(i + 1, j + 1)]
            tris += [(bl, br, c), (br, tr, c), (tr, tl, c), (tl, bl, c)]
    return initial_mesh(coords, tris)


def _cell_mesh(keep, boundary_marker, lo=-1.0, hi=1.0, n=4):
    """Half-unit-cell triangulations of a subset of an n x n grid.

    keep(i, j) -> "full" | "lower" | None selects whole cells or the
    lower-right half below the cell diagonal y - y0 = x - x0.
    """
    xs = _grid_cells(lo, hi, n)
    index = {}
    coords = []

    def vid(i, j):
        if (i, j) not in index:
            index[(i, j)] = len(coords)
            coords.append((xs[i], xs[j]))
        return index[(i, j)]

    tris = []
    for j in range(n):
        for i in range(n):
            what = keep(i, j)
            if what is None:
                continue
            bl, br, tr = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)
            if what == "full":
                tris += [(bl, br, tr), (bl, tr, vid(i, j + 1))]
            elif what == "lower":
                tris.append((bl, br, tr))
            else:
                raise StructureError(f"unknown cell kind {what}")
    mesh_coords = np.array(coords)
    boundary = None
    if boundary_marker is not None:
        # assign markers by edge midpoint after building the raw mesh once
        raw = initial_mesh(mesh_coords, tris)
        boundary = {}
        for e in raw.boundary:
            mid = 0.5 * (mesh_coords[e[0]] + mesh_coords[e[1]])
            boundary[e] = boundary_marker(mid)
    return initial_mesh(mesh_coords, tris, boundary)


def lshape_mesh(n: int = 4) -> Mesh:
    """(-1, 1)^2 minus the closed top-right quadrant square."""
    xs = _grid_cells(-1.0, 1.0, n)

    def keep(i, j):
        if xs[i] >= 0.0 and xs[j] >= 0.0:
            return None
        return "full"

    return _cell_mesh(keep, None, n=n)


def zshape_mesh(n: int = 4) -> Mesh:
    """(-1, 1)^2 minus the wedge conv{(0,0), (-1,0), (-1,-1)}.

    Dirichlet boundary: the segment from (-1, 0) to (0, 0) and the
    diagonal from (-1, -1) to (0, 0); all other boundary is Neumann.
    """
    if n % 2:
        raise StructureError("zshape grid must be even")
    xs = _grid_cells(-1.0, 1.0, n)

    def marker(mid):
        x, y = mid
        on_slit_h = abs(y) < 1e-12 and x < 1e-12
        on_slit_d = abs(y - x) < 1e-12 and x < 1e-12
        return DIRICHLET if (on_slit_h or on_slit_d) else NEUMANN

    def keep(i, j):
        x0, y0 = xs[i], xs[j]
        if x0 >= 0.0 or y0 >= 0.0:
            return "full"
        # third-quadrant block: remove cells above the diagonal y = x,
        # halve cells sitting on the diagonal
        if abs(y0 - x0) < 1e-12:
            return "lower"
        return "full" if y0 < x0 else None

    return _cell_mesh(keep, marker, n=n)


# ---------------------------------------------------------------------------
# Kellogg checkerboard-diffusion problem
# ---------------------------------------------------------------------------

KELLOGG_A = 161.4476387975881
KELLOGG_ALPHA = 0.1
KELLOGG_BETA = -14.92256510455152
KELLOGG_DELTA = np.pi / 4.0

# angular factor mu(phi) = amp * cos((phi - shift) * alpha), per quadrant
_PI = np.pi
_KB = [
    (np.cos((_PI / 2 - KELLOGG_BETA) * KELLOGG_ALPHA), _PI / 2 - KELLOGG_DELTA),
    (np.cos(KELLOGG_DELTA * KELLOGG_ALPHA), _PI - KELLOGG_BETA),
    (np.cos(KELLOGG_BETA * KELLOGG_ALPHA), _PI + KELLOGG_DELTA),
    (np.cos((_PI / 2 - KELLOGG_DELTA) * KELLOGG_ALPHA), 3 * _PI / 2 + KELLOGG_BETA),
]


_KB_AMP = np.array([b[0] for b in _KB])
_KB_SHIFT = np.array([b[1] for b in _KB])


def _kellogg_branch(phi):
    phi = np.mod(np.asarray(phi, dtype=float), 2 * _PI)
    quadrant = np.minimum((phi / (_PI / 2)).astype(np.int64), 3)
    return phi, _KB_AMP[quadrant], _KB_SHIFT[quadrant]


def kellogg_angular(phi: np.ndarray) -> np.ndarray:
    """Four-branch angular factor of the exact solution."""
    phi, amp, shift = _kellogg_branch(phi)
    return amp * np.cos((phi - shift) * KELLOGG_ALPHA)


def _kellogg_angular_deriv(phi: np.ndarray) -> np.ndarray:
    phi, amp, shift = _kellogg_branch(phi)
    return -amp * KELLOGG_ALPHA * np.sin((phi - shift) * KELLOGG_ALPHA)


def kellogg_exact(pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(pts)
    r = np.hypot(pts[:, 0], pts[:, 1])
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    return r**KELLOGG_ALPHA * kellogg_angular(phi)


def kellogg_exact_grad(pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(pts)
    r = np.hypot(pts[:, 0], pts[:, 1])
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    mu = kellogg_angular(phi)
    dmu = _kellogg_angular_deriv(phi)
    rs = np.where(r > 0, r, 1.0) ** (KELLOGG_ALPHA - 1.0)
    er = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    ephi = np.stack([-np.sin(phi), np.cos(phi)], axis=1)
    grad = rs[:, None] * (KELLOGG_ALPHA * mu[:, None] * er + dmu[:, None] * ephi)
    grad[r == 0] = 0.0
    return grad


def kellogg_coefficient(pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(pts)
    return np.where(pts[:, 0] * pts[:, 1] > 0.0, KELLOGG_A, 1.0)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Benchmark:
    name: str
    algorithm: str
    make_mesh: Callable[[], Mesh]
    problem: ProblemSpec
    defaults: dict = field(default_factory=dict)
    expected_rate: dict = field(default_factory=dict)
    reference_goal: Optional[float] = None


def kellogg() -> Benchmark:
    problem = ProblemSpec(
        diffusion=kellogg_coefficient,
        f=0.0,
        dirichlet=kellogg_exact,
        exact=kellogg_exact,
        exact_grad=kellogg_exact_grad,
        name="kellogg",
    )
    return Benchmark(
        name="kellogg",
        algorithm="afem",
        make_mesh=crisscross_square,
        problem=problem,
        defaults=dict(theta=0.5, lambda_alg=0.01, p=1),
        expected_rate={1: -0.5, 2: -1.0},
    )


def _chi_s(pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(pts)
    inside = (np.abs(pts[:, 0]) < 0.5) & (np.abs(pts[:, 1]) < 0.5)
    out = np.zeros((pts.shape[0], 2))
    out[inside] = 1.0
    return out


def zshape_goal() -> Benchmark:
    problem = ProblemSpec(
        f=1.0,
        goal_g=0.0,
        goal_gvec=_chi_s,
        name="zshape_goal",
    )
    return Benchmark(
        name="zshape_goal",
        algorithm="goafem",
        make_mesh=zshape_mesh,
        problem=problem,
        defaults=dict(theta=0.3, lambda_alg=0.7, p=1),
        expected_rate={1: -1.0},  # corrected goal error
        reference_goal=1.015559272415834,
    )


def lshape_convection() -> Benchmark:
    problem = ProblemSpec(
        convection=(-10.0, -10.0),
        f=1.0,
        name="lshape_convection",
    )
    return Benchmark(
        name="lshape_convection",
        algorithm="aisfem",
        make_mesh=lshape_mesh,
        problem=problem,
        defaults=dict(delta=0.1, theta=0.3, lambda_sym=0.1, lambda_alg=0.7, p=1),
        expected_rate={1: -0.5},
    )


def nonlinear_mu(t):
    return 2.0 + (1.0 + t) ** (-2.0)


def nonlinear_mu_antiderivative(s):
    return 2.0 * s - 1.0 / (1.0 + s) + 1.0


def lshape_nonlinear() -> Benchmark:
    problem = ProblemSpec(
        diffusion=None,
        mu=nonlinear_mu,
        mu_antiderivative=nonlinear_mu_antiderivative,
        mu_bounds=(1.75, 9.0),
        f=1.0,
        name="lshape_nonlinear",
    )
    return Benchmark(
        name="lshape_nonlinear",
        algorithm="ailfem",
        make_mesh=lshape_mesh,
        problem=problem,
        defaults=dict(theta=0.3, lambda_lin=0.7, alpha_min=100.0, j_max=1, rho=0.5, p=1),
        expected_rate={1: -0.5},
    )


REGISTRY = {
    "kellogg": kellogg,
    "zshape_goal": zshape_goal,
    "lshape_convection": lshape_convection,
    "lshape_nonlinear": lshape_nonlinear,
}


def get(name: str) -> Benchmark:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise StructureError(f"unknown benchmark {name!r}") from None
