"""Direct-solve oracle and the contractive multilevel-preconditioned CG.

The iterative solver is preconditioned CG in the A-inner product with an
additive multilevel diagonal preconditioner: on every level of the
bisection hierarchy the residual is smoothed by inverse-diagonal scaling
restricted to the DOFs that are new on that level (created DOFs plus the
DOFs of refined elements), and the coarsest level is solved exactly.
Each step costs O(#DOFs + hierarchy size) and the measured energy
contraction is level-robust; the drivers never assume a contraction
constant, they only use the computable increment norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractError, LineageError, StructureError
from .fespace import SparseSystem, Space, prolongation_matrix
from .mesh import _refines

_DENSE_LIMIT = 64


def direct_solve(system: SparseSystem) -> np.ndarray:
    """Oracle solve on the free DOFs (relative residual <= 1e-12)."""
    mat, rhs = system.matrix, system.rhs
    n = mat.shape[0]
    if n == 0:
        return np.zeros(0)
    try:
        if n <= _DENSE_LIMIT:
            x = np.linalg.solve(mat.toarray(), rhs)
        else:
            x = spla.splu(mat.tocsc()).solve(rhs)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise StructureError(f"singular system: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise StructureError("singular system: non-finite solution")
    res = np.linalg.norm(rhs - mat @ x)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > 1e-12 * max(scale, 1.0) * 100:
        raise StructureError(f"direct solve residual too large: {res:.3e}")
    return x


class Hierarchy:
    """Nested spaces with prolongations and per-level new-DOF sets."""

    def __init__(self, spaces: list[Space]):
        if not spaces:
            raise StructureError("hierarchy needs at least one space")
        self.spaces: list[Space] = []
        self.prolongs: list[sp.csr_matrix] = []  # full-DOF maps level l -> l+1
        self.new_dofs: list[np.ndarray] = []
        self.cache: dict = {}
        for space in spaces:
            self.extend(space)

    @property
    def depth(self) -> int:
        return len(self.spaces)

    def extend(self, space: Space) -> None:
        if self.spaces:
            prev = self.spaces[-1]
            if not _refines(space.mesh, prev.mesh):
                raise LineageError("hierarchy levels must be nested refinements")
            self.prolongs.append(prolongation_matrix(prev, space))
            prev_keys = prev.mesh.leaf_keys()
            fresh = [
                i
                for i, t in enumerate(space.mesh.triangles)
                if (t.root, t.path) not in prev_keys
            ]
            created = np.unique(space.elem_dofs[fresh].ravel())
            # widen by the edge neighbors: all DOFs of elements touching a
            # created-or-changed DOF
            touch = np.zeros(space.dim, dtype=bool)
            touch[created] = True
            hit = touch[space.elem_dofs].any(axis=1)
            new = np.unique(space.elem_dofs[hit].ravel())
            self.new_dofs.append(new)
        else:
            self.new_dofs.append(np.arange(space.dim))
        self.spaces.append(space)
        self.cache.clear()


class MultilevelPreconditioner:
    """Symmetric multiplicative V(1,1)-cycle over the bisection hierarchy.

    Level matrices are Galerkin restrictions of the fine system; smoothing
    is damped inverse-diagonal scaling restricted to the DOFs that are new
    on each level, and the coarsest level is solved exactly.  Per
    application the work on level ``l`` is proportional to the stored
    nonzeros of that level, which for geometric mesh growth sums to a
    constant multiple of the fine-level size.
    """

    damping = 0.5

    def __init__(self, hierarchy: Hierarchy, system: SparseSystem):
        if hierarchy.spaces[-1] is not system.space:
            raise LineageError("system space is not the finest hierarchy level")
        fine = system.space
        depth = hierarchy.depth

        # level-to-level prolongations restricted to free DOFs
        self.p: list[sp.csr_matrix] = []
        for l in range(depth - 1):
            coarse, finer = hierarchy.spaces[l], hierarchy.spaces[l + 1]
            self.p.append(hierarchy.prolongs[l][finer.free][:, coarse.free].tocsr())

        # Galerkin level matrices from the fine level down
        self.a: list[sp.csr_matrix] = [None] * depth
        self.a[depth - 1] = system.matrix
        for l in range(depth - 2, -1, -1):
            self.a[l] = (self.p[l].T @ (self.a[l + 1] @ self.p[l])).tocsr()

        a0 = self.a[0].tocsc()
        self.coarse = (
            np.linalg.inv(a0.toarray())
            if 0 < a0.shape[0] <= _DENSE_LIMIT
            else None
        )
        self.coarse_lu = (
            None if self.coarse is not None or a0.shape[0] == 0 else spla.splu(a0)
        )

        self.scale: list[np.ndarray] = [np.zeros(0)]
        for l in range(1, depth):
            space = hierarchy.spaces[l]
            diag = np.asarray(self.a[l].diagonal())
            free_pos = np.full(space.dim, -1, dtype=np.int64)
            free_pos[space.free] = np.arange(space.free.size)
            pos = free_pos[hierarchy.new_dofs[l]]
            pos = pos[pos >= 0]
            s = np.zeros(space.free.size)
            with np.errstate(divide="ignore"):
                s[pos] = np.where(diag[pos] > 0, self.damping / diag[pos], 0.0)
            self.scale.append(s)

        self.ops = 0
        self.size = sum(int(m.nnz) for m in self.a) + sum(int(m.nnz) for m in self.p)

    def apply(self, r: np.ndarray) -> np.ndarray:
        depth = len(self.a)
        res = [None] * depth
        err = [None] * depth
        res[depth - 1] = r
        for l in range(depth - 1, 0, -1):
            e = self.scale[l] * res[l]
            err[l] = e
            res[l - 1] = self.p[l - 1].T @ (res[l] - self.a[l] @ e)
        if self.coarse is not None:
            err[0] = self.coarse @ res[0]
        elif self.coarse_lu is not None:
            err[0] = self.coarse_lu.solve(res[0])
        else:
            err[0] = np.zeros(0)
        for l in range(1, depth):
            e = err[l] + self.p[l - 1] @ err[l - 1]
            e += self.scale[l] * (res[l] - self.a[l] @ e)
            err[l] = e
        self.ops += self.size
        return err[depth - 1]


@dataclass
class SolverState:
    """Iterate plus the CG internals carried between steps."""

    x: np.ndarray
    k: int = 0
    increment: float = float("inf")
    ops: int = 0
    _r: np.ndarray | None = None
    _z: np.ndarray | None = None
    _p: np.ndarray | None = None
    _rz: float = 0.0


def _preconditioner(system: SparseSystem, hierarchy: Hierarchy) -> MultilevelPreconditioner:
    # keyed by the matrix object: systems sharing a matrix (multiple right-
    # hand sides) share the preconditioner; the cached value keeps the
    # matrix alive, so the id cannot be recycled while the entry exists
    key = id(system.matrix)
    pre = hierarchy.cache.get(key)
    if pre is None:
        pre = MultilevelPreconditioner(hierarchy, system)
        hierarchy.cache[key] = pre
    return pre


def start_state(system: SparseSystem, x0=None) -> SolverState:
    x = np.zeros(system.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    return SolverState(x=x)


def solver_step(
    system: SparseSystem,
    hierarchy: Hierarchy,
    state: SolverState,
    energy_matrix: sp.csr_matrix | None = None,
) -> SolverState:
    """One preconditioned-CG step; ``state.increment`` is |||u^k - u^{k-1}|||.

    ``energy_matrix`` (free-restricted) measures the increment when the
    energy norm differs from the system's A-norm; default is the system
    matrix itself.
    """
    if not system.symmetric:
        raise ContractError("solver_step requires a symmetric (SPD) system")
    pre = _preconditioner(system, hierarchy)
    mat = system.matrix
    if state._r is None:
        state._r = system.rhs - mat @ state.x
        state._z = pre.apply(state._r)
        state._p = state._z.copy()
        state._rz = float(state._r @ state._z)
    r, z, p = state._r, state._z, state._p
    ap = mat @ p
    pap = float(p @ ap)
    if pap < 0.0:
        raise ContractError("negative curvature: system is not positive definite")
    if pap == 0.0 or state._rz <= 0.0:
        state.k += 1
        state.increment = 0.0
        return state
    alpha = state._rz / pap
    d = alpha * p
    state.x = state.x + d
    r = r - alpha * ap
    z = pre.apply(r)
    rz_new = float(r @ z)
    beta = rz_new / state._rz
    state._p = z + beta * p
    state._r, state._z, state._rz = r, z, rz_new
    if energy_matrix is None:
        state.increment = abs(alpha) * np.sqrt(pap)
    else:
        state.increment = float(np.sqrt(max(d @ (energy_matrix @ d), 0.0)))
    state.k += 1
    state.ops += int(mat.nnz) + pre.size + 5 * mat.shape[0]
    return state


def measure_contraction(
    system: SparseSystem, hierarchy: Hierarchy, steps: int, x0=None
) -> float:
    """Worst per-step energy-error contraction vs the direct-solve oracle."""
    star = direct_solve(system)
    mat = system.matrix

    def err(x):
        e = star - x
        return float(np.sqrt(max(e @ (mat @ e), 0.0)))

    state = start_state(system, x0)
    prev = err(state.x)
    worst = 0.0
    floor = 1e-13 * max(err(np.zeros_like(star)), 1.0)
    for _ in range(steps):
        state = solver_step(system, hierarchy, state)
        cur = err(state.x)
        if prev > floor:
            worst = max(worst, cur / prev)
        prev = cur
        if cur <= floor:
            break
    return worst
