"""Residual-based a-posteriori error indicators and data oscillation.

Per-element squared indicator (d = 2):

    eta_T^2 = |T| * || f + div(A grad v - fvec) - b.grad v - c v ||_{L2(T)}^2
            + |T|^(1/2) * ( 1/2 * sum over interior edges of T of the
                            squared normal-flux jump
                          + sum over Neumann edges of the squared flux
                          + sum over Dirichlet edges of the squared
                            arc-length-derivative data oscillation )

Interior-edge jumps are split half/half between the two incident
elements, each weighted with its own |T|^(1/2), so the sum over all
elements counts every edge integral exactly once.  For quasilinear
problems the flux uses the frozen coefficient mu(|grad v|^2).  Vector
loads (fvec and the goal's gvec) are treated as element-wise constant
(evaluated at centroids), so their divergence vanishes inside elements
and they enter only through the flux jumps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quadrature
from .errors import StructureError
from .fespace import (
    DIRICHLET,
    NEUMANN,
    ProblemSpec,
    Space,
    _scalar_field,
    _vector_field,
    reference_hessians,
    shape_functions,
)

_EDGE_GAUSS = 5  # edge rule for flux jumps and data oscillation


@dataclass(frozen=True)
class Indicators:
    """Immutable per-element squared contributions with cached total."""

    eta2: np.ndarray
    total2: float

    @property
    def total(self) -> float:
        return float(np.sqrt(self.total2))

    def __len__(self) -> int:
        return self.eta2.shape[0]


def make_indicators(eta2: np.ndarray) -> Indicators:
    eta2 = np.asarray(eta2, dtype=float)
    if np.any(eta2 < 0):
        raise StructureError("negative squared indicator")
    arr = eta2.copy()
    arr.setflags(write=False)
    return Indicators(eta2=arr, total2=float(arr.sum()))


def subset_total(ind: Indicators, subset) -> float:
    """(sum over the subset of eta_T^2)^(1/2)."""
    idx = np.fromiter((int(i) for i in subset), dtype=np.int64)
    if idx.size == 0:
        return 0.0
    return float(np.sqrt(ind.eta2[idx].sum()))


# ---------------------------------------------------------------------------
# edge topology (cached per space)
# ---------------------------------------------------------------------------


def _edge_data(space: Space) -> dict:
    data = space.cache.get("estimator_edges")
    if data is not None:
        return data
    mesh = space.mesh
    inc = mesh.edge_incidence()
    interior = []
    bdry = []
    for e, tris in sorted(inc.items()):
        if len(tris) == 2:
            interior.append((e[0], e[1], tris[0], tris[1]))
        else:
            bdry.append((e[0], e[1], tris[0], mesh.boundary[e]))
    coords = mesh.coords

    def pack(rows, with_marker):
        if not rows:
            shape = (0, 2)
            return dict(
                a=np.zeros(0, np.int64), b=np.zeros(0, np.int64),
                elems=np.zeros((0, 2 if not with_marker else 1), np.int64),
                length=np.zeros(0), normal=np.zeros(shape), marker=np.zeros(0, np.int64),
            )
        a = np.array([r[0] for r in rows], np.int64)
        b = np.array([r[1] for r in rows], np.int64)
        tang = coords[b] - coords[a]
        length = np.linalg.norm(tang, axis=1)
        normal = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / length[:, None]
        if with_marker:
            elems = np.array([[r[2]] for r in rows], np.int64)
            marker = np.array([0 if r[3] == DIRICHLET else 1 for r in rows], np.int64)
        else:
            elems = np.array([[r[2], r[3]] for r in rows], np.int64)
            marker = np.zeros(0, np.int64)
        return dict(a=a, b=b, elems=elems, length=length, normal=normal, marker=marker)

    data = {"interior": pack(interior, False), "boundary": pack(bdry, True)}
    # orient interior normals outward from the first (left) element
    it = data["interior"]
    if it["a"].size:
        cen = space.centroids()[it["elems"][:, 0]]
        mid = 0.5 * (coords[it["a"]] + coords[it["b"]])
        flip = np.einsum("ed,ed->e", it["normal"], mid - cen) < 0
        it["normal"][flip] *= -1.0
    bd = data["boundary"]
    if bd["a"].size:
        cen = space.centroids()[bd["elems"][:, 0]]
        mid = 0.5 * (coords[bd["a"]] + coords[bd["b"]])
        flip = np.einsum("ed,ed->e", bd["normal"], mid - cen) < 0
        bd["normal"][flip] *= -1.0
    space.cache["estimator_edges"] = data
    return data


def _gradients_at(space: Space, coeffs: np.ndarray, elems: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """FE gradient at physical points, each assigned to a given element.

    elems: (n,), pts: (n, 2) -> (n, 2).
    """
    origin, _, jinv_t, _ = space.geometry()
    ref = np.einsum("nji,nj->ni", jinv_t[elems], pts - origin[elems])
    _, gref = shape_functions(space.p, ref)
    gphys = np.einsum("nij,nlj->nli", jinv_t[elems], gref)
    return np.einsum("nli,nl->ni", gphys, coeffs[space.elem_dofs[elems]])


def _element_coefficient(space: Space, problem: ProblemSpec, coeffs: np.ndarray) -> np.ndarray:
    """Scalar diffusion per element (frozen mu coefficient if nonlinear)."""
    if problem.mu is not None:
        grads = space.physical_gradients()
        gu = np.einsum("tqli,tl->tqi", grads, coeffs[space.elem_dofs])
        g2 = np.sum(gu * gu, axis=2).mean(axis=1)  # constant for p = 1
        return np.asarray(problem.mu(g2), dtype=float)
    return _scalar_field(problem.diffusion, space.centroids())


def _volume_residual_sq(
    space: Space, coeffs: np.ndarray, problem: ProblemSpec, f, a_elem: np.ndarray
) -> np.ndarray:
    """|T| * integral of the squared volume residual, per element."""
    phys, ref, w = space.quad_points()
    _, _, jinv_t, area = space.geometry()
    detj = 2.0 * area
    flat = phys.reshape(-1, 2)
    r = _scalar_field(f, flat).reshape(phys.shape[:2])
    if space.p == 2:
        hess = reference_hessians(space.p)
        hphys = np.einsum("tij,ljk,tmk->tlim", jinv_t, hess, jinv_t)
        lap = np.einsum("tlii->tl", hphys)
        lap_u = np.einsum("tl,tl->t", lap, coeffs[space.elem_dofs])
        r = r + (a_elem * lap_u)[:, None]
    if problem.convection is not None:
        b = np.asarray(problem.convection, dtype=float)
        grads = space.physical_gradients()
        gu = np.einsum("tqli,tl->tqi", grads, coeffs[space.elem_dofs])
        r = r - gu @ b
    if problem.reaction is not None:
        vals, _ = shape_functions(space.p, ref)
        u_q = np.einsum("ql,tl->tq", vals, coeffs[space.elem_dofs])
        c = _scalar_field(problem.reaction, flat).reshape(phys.shape[:2])
        r = r - c * u_q
    integral = detj * np.einsum("q,tq->t", w, r * r)
    return area * integral


def _edge_flux(
    space: Space,
    coeffs: np.ndarray,
    a_elem: np.ndarray,
    fvec_elem: np.ndarray | None,
    elems: np.ndarray,
    pts: np.ndarray,
    normal: np.ndarray,
) -> np.ndarray:
    """(a grad v - fvec) . n from the side of the given elements."""
    grad = _gradients_at(space, coeffs, elems, pts)
    flux = a_elem[elems, None] * grad
    if fvec_elem is not None:
        flux = flux - fvec_elem[elems]
    return np.einsum("nd,nd->n", flux, normal)


def _indicators_core(
    space: Space,
    coeffs: np.ndarray,
    problem: ProblemSpec,
    f,
    fvec,
    dirichlet_osc: bool,
) -> Indicators:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != space.dim:
        raise StructureError("coefficient vector does not match space dimension")
    _, _, _, area = space.geometry()
    sqrt_area = np.sqrt(area)
    a_elem = _element_coefficient(space, problem, coeffs)
    fvec_elem = None
    if fvec is not None:
        fvec_elem = _vector_field(fvec, space.centroids())

    eta2 = _volume_residual_sq(space, coeffs, problem, f, a_elem)

    edges = _edge_data(space)
    tq, tw = quadrature.edge_rule(_EDGE_GAUSS)
    coords = space.mesh.coords

    it = edges["interior"]
    ne = it["a"].size
    if ne:
        pa, pb = coords[it["a"]], coords[it["b"]]
        pts = pa[:, None, :] + tq[None, :, None] * (pb - pa)[:, None, :]
        pts_flat = pts.reshape(-1, 2)
        nrm = np.repeat(it["normal"], tq.size, axis=0)
        left = np.repeat(it["elems"][:, 0], tq.size)
        right = np.repeat(it["elems"][:, 1], tq.size)
        jump = _edge_flux(space, coeffs, a_elem, fvec_elem, left, pts_flat, nrm) - _edge_flux(
            space, coeffs, a_elem, fvec_elem, right, pts_flat, nrm
        )
        integral = it["length"] * (jump.reshape(ne, -1) ** 2 @ tw)
        np.add.at(eta2, it["elems"][:, 0], 0.5 * sqrt_area[it["elems"][:, 0]] * integral)
        np.add.at(eta2, it["elems"][:, 1], 0.5 * sqrt_area[it["elems"][:, 1]] * integral)

    bd = edges["boundary"]
    nb = bd["a"].size
    if nb:
        neu = np.flatnonzero(bd["marker"] == 1)
        if neu.size:
            pa, pb = coords[bd["a"][neu]], coords[bd["b"][neu]]
            pts = (pa[:, None, :] + tq[None, :, None] * (pb - pa)[:, None, :]).reshape(-1, 2)
            nrm = np.repeat(bd["normal"][neu], tq.size, axis=0)
            el = np.repeat(bd["elems"][neu, 0], tq.size)
            flux = _edge_flux(space, coeffs, a_elem, fvec_elem, el, pts, nrm)
            integral = bd["length"][neu] * (flux.reshape(neu.size, -1) ** 2 @ tw)
            np.add.at(eta2, bd["elems"][neu, 0], sqrt_area[bd["elems"][neu, 0]] * integral)
        if dirichlet_osc and problem.dirichlet is not None:
            dir_ = np.flatnonzero(bd["marker"] == 0)
            if dir_.size:
                osc = _dirichlet_oscillation(space, problem, bd, dir_, tq, tw)
                np.add.at(eta2, bd["elems"][dir_, 0], sqrt_area[bd["elems"][dir_, 0]] * osc)

    return make_indicators(eta2)


def _dirichlet_oscillation(space, problem, bd, sel, tq, tw) -> np.ndarray:
    """Integral over each edge of ((1 - Pi^{p-1}) dg_D/ds)^2.

    The arc-length derivative uses the exact gradient when available,
    else a central finite difference of the boundary data.
    """
    coords = space.mesh.coords
    pa, pb = coords[bd["a"][sel]], coords[bd["b"][sel]]
    tang = pb - pa
    length = bd["length"][sel]
    unit_t = tang / length[:, None]
    pts = (pa[:, None, :] + tq[None, :, None] * tang[:, None, :]).reshape(-1, 2)
    if problem.exact_grad is not None:
        grad = np.asarray(problem.exact_grad(pts), dtype=float)
        dgds = np.einsum("nd,nd->n", grad, np.repeat(unit_t, tq.size, axis=0))
    else:
        h = 1e-6
        step = np.repeat(h * length[:, None] * unit_t, tq.size, axis=0)
        g = problem.dirichlet
        dgds = (
            np.asarray(g(pts + step), dtype=float) - np.asarray(g(pts - step), dtype=float)
        ) / (2.0 * h * np.repeat(length, tq.size))
    dgds = dgds.reshape(sel.size, tq.size)
    # L2(edge) projection onto polynomials of degree p-1 in shifted Legendre basis
    deg = space.p - 1
    basis = np.ones((deg + 1, tq.size))
    if deg >= 1:
        basis[1] = 2.0 * tq - 1.0
    if deg >= 2:
        basis[2] = 0.5 * (3.0 * basis[1] ** 2 - 1.0)
    norms = basis**2 @ tw
    coef = (dgds * tw) @ basis.T / norms
    resid = dgds - coef @ basis
    return length * (resid**2 @ tw)


def residual_indicators(space: Space, coeffs, problem: ProblemSpec) -> Indicators:
    """Indicators for the primal problem (selects the residual form from
    the problem contents: symmetric, convection-reaction, or quasilinear)."""
    return _indicators_core(space, coeffs, problem, problem.f, problem.fvec, True)


def dual_indicators(space: Space, coeffs, problem: ProblemSpec) -> Indicators:
    """Indicators for the dual (goal) problem: loads (g, gvec), zero BC."""
    g = problem.goal_g if problem.goal_g is not None else 0.0
    return _indicators_core(space, coeffs, problem, g, problem.goal_gvec, False)


# ---------------------------------------------------------------------------
# data oscillation (diagnostic)
# ---------------------------------------------------------------------------


def data_oscillation(space: Space, coeffs, problem: ProblemSpec) -> float:
    """osc = (sum_T |T| * ||(1 - Pi_q) R||^2_T)^(1/2), q = 2(p-1).

    Edge contributions vanish identically here: flux jumps of degree-p
    elements are polynomials of degree p-1 <= q along each edge and the
    supported vector loads are element-wise constant.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    phys, ref, w = space.quad_points()
    _, _, jinv_t, area = space.geometry()
    detj = 2.0 * area
    a_elem = _element_coefficient(space, problem, coeffs)
    flat = phys.reshape(-1, 2)
    r = _scalar_field(problem.f, flat).reshape(phys.shape[:2])
    if space.p == 2:
        hess = reference_hessians(space.p)
        hphys = np.einsum("tij,ljk,tmk->tlim", jinv_t, hess, jinv_t)
        lap = np.einsum("tlii->tl", hphys)
        r = r + (a_elem * np.einsum("tl,tl->t", lap, coeffs[space.elem_dofs]))[:, None]
    if problem.convection is not None:
        b = np.asarray(problem.convection, dtype=float)
        grads = space.physical_gradients()
        r = r - np.einsum("tqli,tl,i->tq", grads, coeffs[space.elem_dofs], b)
    q = 2 * (space.p - 1)
    if q == 0:
        basis = np.ones((1, ref.shape[0]))
    else:
        x, y = ref[:, 0], ref[:, 1]
        basis = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    gram = (basis * w) @ basis.T
    rhs = (r * w) @ basis.T  # (nt, nbasis)
    coef = np.linalg.solve(gram, rhs.T).T
    res2 = (r * r) @ w - np.einsum("ti,ij,tj->t", coef, gram, coef)
    osc2 = area * detj * np.maximum(res2, 0.0)
    return float(np.sqrt(osc2.sum()))
