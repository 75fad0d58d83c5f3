"""Lagrange finite element spaces (p = 1, 2), assembly and prolongation.

Coefficient vectors always have one entry per global DOF (free and
Dirichlet alike); linear systems are posed on the free DOFs with the
Dirichlet lifting moved to the right-hand side.  Scalar coefficient
fields may be constants or vectorized callables of an (n, 2) point
array; the diffusion coefficient is evaluated per element at the
centroid, so piecewise-constant coefficients must be aligned with the
initial mesh (all benchmark problems are).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import quadrature
from .errors import LineageError, StructureError
from .mesh import DIRICHLET, NEUMANN, Mesh, _ekey, _refines


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients, loads and boundary data of one model problem.

    Exactly one of the linear diffusion ``diffusion`` or the scalar
    nonlinearity ``mu`` drives the principal part.  ``mu_bounds`` are the
    monotonicity/growth constants (alpha, L) of t -> mu(t^2) t.
    """

    diffusion: object = 1.0
    convection: Optional[tuple] = None
    reaction: object = None
    mu: Optional[Callable] = None
    mu_antiderivative: Optional[Callable] = None
    mu_bounds: Optional[tuple] = None
    f: object = 0.0
    fvec: object = None
    dirichlet: Optional[Callable] = None
    exact: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    goal_g: object = None
    goal_gvec: object = None
    name: str = ""

    def __post_init__(self):
        if self.mu is not None:
            if self.mu_bounds is None:
                raise StructureError("mu requires declared growth bounds (alpha, L)")
            alpha, big_l = self.mu_bounds
            if not 0 < alpha <= big_l / 3.0:
                raise StructureError("mu growth bounds must satisfy 0 < alpha <= L/3")

    @property
    def symmetric(self) -> bool:
        return self.convection is None

    def dual(self) -> "ProblemSpec":
        """Same operator with the goal data as load and zero Dirichlet data."""
        return ProblemSpec(
            diffusion=self.diffusion,
            convection=self.convection,
            reaction=self.reaction,
            f=self.goal_g if self.goal_g is not None else 0.0,
            fvec=self.goal_gvec,
            dirichlet=None,
            name=self.name + "-dual",
        )


def _scalar_field(value, pts: np.ndarray) -> np.ndarray:
    if callable(value):
        return np.asarray(value(pts), dtype=float)
    return np.full(pts.shape[0], float(value))


def _vector_field(value, pts: np.ndarray) -> np.ndarray:
    if callable(value):
        return np.asarray(value(pts), dtype=float)
    out = np.empty((pts.shape[0], 2))
    out[:] = np.asarray(value, dtype=float)
    return out


# ---------------------------------------------------------------------------
# reference basis
# ---------------------------------------------------------------------------

_DL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # gradients of (l0, l1, l2)


def shape_functions(p: int, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, nloc) and reference gradients (nq, nloc, 2)."""
    x, y = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)  # (nq, 3)
    if p == 1:
        vals = lam
        grads = np.broadcast_to(_DL, (pts.shape[0], 3, 2)).copy()
        return vals, grads
    if p == 2:
        nq = pts.shape[0]
        vals = np.empty((nq, 6))
        grads = np.empty((nq, 6, 2))
        for i in range(3):
            vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
            grads[:, i] = (4.0 * lam[:, i, None] - 1.0) * _DL[i]
        edges = ((1, 2), (2, 0), (0, 1))  # local nodes 3, 4, 5
        for n, (a, b) in enumerate(edges, start=3):
            vals[:, n] = 4.0 * lam[:, a] * lam[:, b]
            grads[:, n] = 4.0 * (lam[:, a, None] * _DL[b] + lam[:, b, None] * _DL[a])
        return vals, grads
    raise StructureError(f"unsupported degree {p}")


def reference_hessians(p: int) -> np.ndarray:
    """Constant reference Hessians (nloc, 2, 2); zero for p = 1."""
    if p == 1:
        return np.zeros((3, 2, 2))
    hess = np.empty((6, 2, 2))
    for i in range(3):
        hess[i] = 4.0 * np.outer(_DL[i], _DL[i])
    edges = ((1, 2), (2, 0), (0, 1))
    for n, (a, b) in enumerate(edges, start=3):
        hess[n] = 4.0 * (np.outer(_DL[a], _DL[b]) + np.outer(_DL[b], _DL[a]))
    return hess


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------


class Space:
    """Lagrange space of degree p on a mesh with DOF and boundary maps."""

    def __init__(self, mesh: Mesh, p: int):
        if p not in (1, 2):
            raise StructureError(f"unsupported degree {p}")
        self.mesh = mesh
        self.p = p
        self.cache: dict = {}
        nv = mesh.n_vertices
        tri = mesh.tri_array
        if p == 1:
            self.edge_index = {}
            self.elem_dofs = tri.copy()
            self.dim = nv
            self.dof_coords = mesh.coords.copy()
        else:
            edges = sorted({e for t in mesh.triangles for e in t.edges()})
            self.edge_index = {e: nv + i for i, e in enumerate(edges)}
            ed = np.empty((len(mesh.triangles), 6), dtype=np.int64)
            ed[:, :3] = tri
            for i, t in enumerate(mesh.triangles):
                a, b, c = t.v
                ed[i, 3] = self.edge_index[_ekey(b, c)]
                ed[i, 4] = self.edge_index[_ekey(c, a)]
                ed[i, 5] = self.edge_index[_ekey(a, b)]
            self.elem_dofs = ed
            self.dim = nv + len(edges)
            mids = 0.5 * (mesh.coords[[e[0] for e in edges]] + mesh.coords[[e[1] for e in edges]])
            self.dof_coords = np.vstack([mesh.coords, mids])

        dirichlet = np.zeros(self.dim, dtype=bool)
        neumann = np.zeros(self.dim, dtype=bool)
        for e, marker in mesh.boundary.items():
            target = dirichlet if marker == DIRICHLET else neumann
            target[e[0]] = True
            target[e[1]] = True
            if p == 2:
                target[self.edge_index[e]] = True
        self.dirichlet_mask = dirichlet
        self.neumann_touch = neumann & ~dirichlet
        self.free = np.flatnonzero(~dirichlet)
        self.n_free = self.free.size

    # ------------------------------------------------------------ geometry
    def geometry(self):
        """Per-element affine maps: (origin, J, JinvT, area)."""
        geo = self.cache.get("geometry")
        if geo is None:
            tri = self.mesh.tri_array
            pts = self.mesh.coords[tri]  # (nt, 3, 2)
            origin = pts[:, 0]
            jac = np.stack([pts[:, 1] - origin, pts[:, 2] - origin], axis=2)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            inv = np.empty_like(jac)
            inv[:, 0, 0] = jac[:, 1, 1]
            inv[:, 0, 1] = -jac[:, 0, 1]
            inv[:, 1, 0] = -jac[:, 1, 0]
            inv[:, 1, 1] = jac[:, 0, 0]
            inv /= det[:, None, None]
            jinv_t = np.swapaxes(inv, 1, 2)
            geo = (origin, jac, jinv_t, 0.5 * det)
            self.cache["geometry"] = geo
        return geo

    def centroids(self) -> np.ndarray:
        cen = self.cache.get("centroids")
        if cen is None:
            cen = self.mesh.coords[self.mesh.tri_array].mean(axis=1)
            self.cache["centroids"] = cen
        return cen

    def quad_points(self):
        """Physical quadrature points (nt, nq, 2), ref points, weights."""
        qp = self.cache.get("quad_points")
        if qp is None:
            ref, w = quadrature.triangle_rule(self.p)
            origin, jac, _, _ = self.geometry()
            phys = origin[:, None, :] + np.einsum("tij,qj->tqi", jac, ref)
            qp = (phys, ref, w)
            self.cache["quad_points"] = qp
        return qp

    def physical_gradients(self):
        """Basis gradients at quadrature points, (nt, nq, nloc, 2)."""
        pg = self.cache.get("physical_gradients")
        if pg is None:
            _, ref, _ = self.quad_points()
            _, grads_ref = shape_functions(self.p, ref)
            _, _, jinv_t, _ = self.geometry()
            pg = np.einsum("tij,qlj->tqli", jinv_t, grads_ref)
            self.cache["physical_gradients"] = pg
        return pg


def build_space(mesh: Mesh, p: int) -> Space:
    return Space(mesh, p)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SparseSystem:
    """Linear system on free DOFs plus the full-operator bookkeeping."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    lift: np.ndarray
    space: Space
    symmetric: bool
    full: sp.csr_matrix
    load_full: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def full_vector(self, x_free: np.ndarray) -> np.ndarray:
        out = self.lift.copy()
        out[self.space.free] = x_free
        return out


def diffusion_at_quadrature(
    space: Space, problem: ProblemSpec, linearization_point=None
) -> np.ndarray:
    """Scalar diffusion coefficient per (element, quadrature point)."""
    _, _, w = space.quad_points()
    nt, nq = space.mesh.n_triangles, w.size
    if problem.mu is not None:
        if linearization_point is None:
            raise StructureError("nonlinear problem assembly needs a linearization point")
        if linearization_point.shape[0] != space.dim:
            raise StructureError("linearization point has wrong dimension")
        grads = space.physical_gradients()
        gu = np.einsum("tqli,tl->tqi", grads, linearization_point[space.elem_dofs])
        return np.asarray(problem.mu(np.sum(gu * gu, axis=2)), dtype=float)
    coeff = _scalar_field(problem.diffusion, space.centroids())
    return np.broadcast_to(coeff[:, None], (nt, nq)).copy()


def assemble(
    space: Space, problem: ProblemSpec, linearization_point=None
) -> SparseSystem:
    """Assemble stiffness (+ convection/reaction) and the load vector."""
    phys, ref, w = space.quad_points()
    vals, _ = shape_functions(space.p, ref)
    grads = space.physical_gradients()  # (nt, nq, nloc, 2)
    _, _, _, area = space.geometry()
    detj = 2.0 * area
    nloc = space.elem_dofs.shape[1]

    aq = diffusion_at_quadrature(space, problem, linearization_point)
    wq = w[None, :] * detj[:, None]  # (nt, nq)
    local = np.einsum("tq,tqid,tqjd->tij", wq * aq, grads, grads)

    symmetric = problem.symmetric
    if problem.convection is not None:
        b = np.asarray(problem.convection, dtype=float)
        bg = np.einsum("d,tqjd->tqj", b, grads)
        local += np.einsum("tq,qi,tqj->tij", wq, vals, bg)
    if problem.reaction is not None:
        flat = phys.reshape(-1, 2)
        c = _scalar_field(problem.reaction, flat).reshape(wq.shape)
        local += np.einsum("tq,qi,qj->tij", wq * c, vals, vals)

    rows = np.repeat(space.elem_dofs, nloc, axis=1).ravel()
    cols = np.tile(space.elem_dofs, (1, nloc)).ravel()
    full = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(space.dim, space.dim)
    ).tocsr()

    load = np.zeros(space.dim)
    flat = phys.reshape(-1, 2)
    fq = _scalar_field(problem.f, flat).reshape(wq.shape)
    local_load = np.einsum("tq,qi->ti", wq * fq, vals)
    if problem.fvec is not None:
        fv = _vector_field(problem.fvec, flat).reshape(wq.shape + (2,))
        local_load += np.einsum("tq,tqd,tqid->ti", wq, fv, grads)
    np.add.at(load, space.elem_dofs.ravel(), local_load.ravel())

    lift = np.zeros(space.dim)
    if problem.dirichlet is not None:
        dmask = space.dirichlet_mask
        lift[dmask] = np.asarray(problem.dirichlet(space.dof_coords[dmask]), dtype=float)

    free = space.free
    matrix = full[free][:, free].tocsr()
    rhs = load[free] - full[free] @ lift
    return SparseSystem(
        matrix=matrix,
        rhs=rhs,
        lift=lift,
        space=space,
        symmetric=symmetric,
        full=full,
        load_full=load,
    )


def energy_matrix(space: Space, problem: ProblemSpec) -> sp.csr_matrix:
    """Full-DOF matrix of the symmetric diffusion form inducing |||.|||.

    For nonlinear problems the energy norm is the unweighted H1 seminorm.
    """
    key = ("energy_matrix", problem.diffusion if problem.mu is None else None)
    cached = space.cache.get(key)
    if cached is None:
        base = ProblemSpec(
            diffusion=1.0 if problem.mu is not None else problem.diffusion
        )
        cached = assemble(space, base).full
        space.cache[key] = cached
    return cached


def energy_product(space: Space, problem: ProblemSpec, u, v) -> float:
    """a(u, v) with only the symmetric diffusion part (full-DOF vectors)."""
    mat = energy_matrix(space, problem)
    return float(np.asarray(u) @ (mat @ np.asarray(v)))


def energy_norm(space: Space, problem: ProblemSpec, u) -> float:
    return float(np.sqrt(max(energy_product(space, problem, u, u), 0.0)))


# ---------------------------------------------------------------------------
# prolongation
# ---------------------------------------------------------------------------


def prolongation_matrix(coarse: Space, fine: Space) -> sp.csr_matrix:
    key = ("prolongation", coarse)
    cached = fine.cache.get(key)
    if cached is not None:
        return cached
    if coarse.p != fine.p:
        raise LineageError("prolongation requires equal polynomial degree")
    if not coarse.mesh.same_lineage(fine.mesh) or not _refines(fine.mesh, coarse.mesh):
        raise LineageError("fine space's mesh does not refine the coarse space's mesh")

    ancestor_of = {}
    ck = {k: i for i, k in enumerate((t.root, t.path) for t in coarse.mesh.triangles)}
    for i, t in enumerate(fine.mesh.triangles):
        for n in range(len(t.path), -1, -1):
            j = ck.get((t.root, t.path[:n]))
            if j is not None:
                ancestor_of[i] = j
                break

    nloc = fine.elem_dofs.shape[1]
    # first fine element featuring each DOF decides its row
    flat_dofs = fine.elem_dofs.ravel()
    _, first = np.unique(flat_dofs, return_index=True)
    origin, _, jinv_t, _ = coarse.geometry()
    rows, cols, vals = [], [], []
    for idx in first:
        elem, loc = divmod(int(idx), nloc)
        dof = int(flat_dofs[idx])
        anc = ancestor_of[elem]
        x = fine.dof_coords[dof]
        ref = (jinv_t[anc].T @ (x - origin[anc]))[None, :]
        phi, _ = shape_functions(coarse.p, ref)
        for loc_c, val in enumerate(phi[0]):
            if abs(val) > 1e-13:
                rows.append(dof)
                cols.append(int(coarse.elem_dofs[anc, loc_c]))
                vals.append(float(val))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(fine.dim, coarse.dim)).tocsr()
    fine.cache[key] = mat
    return mat


def prolongate(coarse: Space, fine: Space, coeffs: np.ndarray) -> np.ndarray:
    """Coefficients of the same function in the finer space (exact embedding)."""
    return prolongation_matrix(coarse, fine) @ np.asarray(coeffs, dtype=float)


# ---------------------------------------------------------------------------
# evaluation and interpolation
# ---------------------------------------------------------------------------


def evaluate(space: Space, coeffs, points) -> np.ndarray:
    """Pointwise FE function values; raises if a point is outside the mesh."""
    coeffs = np.asarray(coeffs, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    origin, _, jinv_t, _ = space.geometry()
    out = np.empty(points.shape[0])
    tol = 1e-12
    for i, x in enumerate(points):
        ref = np.einsum("tji,tj->ti", jinv_t, x[None, :] - origin)
        inside = (
            (ref[:, 0] >= -tol)
            & (ref[:, 1] >= -tol)
            & (ref[:, 0] + ref[:, 1] <= 1.0 + tol)
        )
        hits = np.flatnonzero(inside)
        if hits.size == 0:
            raise StructureError(f"point {tuple(x)} lies outside the mesh")
        t = int(hits[0])
        phi, _ = shape_functions(space.p, ref[t][None, :])
        out[i] = float(phi[0] @ coeffs[space.elem_dofs[t]])
    return out


def interpolate(space: Space, fn) -> np.ndarray:
    """Nodal interpolation of a callable (or constant) onto the space."""
    if callable(fn):
        return np.asarray(fn(space.dof_coords), dtype=float)
    return np.full(space.dim, float(fn))
