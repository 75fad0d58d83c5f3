"""Iterative symmetrization and linearization drivers.

Two triple-indexed adaptive loops (level, outer iteration, algebraic
step) wrap the contractive multigrid-CG solver:

* ``run_aisfem`` treats a non-symmetric convection-reaction problem by
  the damped Zarantonello fixed-point map, whose update solves a
  symmetric positive definite system in the energy inner product.
* ``run_ailfem`` treats a scalar quasilinear problem by the Kacanov
  fixed-point map, re-assembling the diffusion coefficient at the
  previous iterate; its stopping criteria use the energy difference
  dist^2(v, w) = E(w) - E(v), which the iteration provably decreases.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp

from .afem import BASE_COLUMNS, SOLVER_CAP, AdaptiveTrace, StepRecord
from .errors import ContractError, StructureError
from .estimator import residual_indicators
from .fespace import (
    ProblemSpec,
    Space,
    SparseSystem,
    assemble,
    build_space,
    energy_matrix,
    energy_norm,
    prolongate,
)
from .linsolve import Hierarchy, direct_solve, solver_step, start_state
from .marking import doerfler_binned, doerfler_min
from .mesh import Mesh, refine

TRIPLE_COLUMNS = BASE_COLUMNS + ["j", "sym_increment", "alg_increment"]
AILFEM_COLUMNS = TRIPLE_COLUMNS + [
    "energy", "dist2", "alpha_ratio", "alpha_min", "J_max",
]

_EQUAL_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# Zarantonello symmetrization
# ---------------------------------------------------------------------------


def _sym_matrix(space: Space, problem: ProblemSpec) -> sp.csr_matrix:
    """Free-restricted matrix of the symmetric principal part (cached)."""
    key = ("sym_free_matrix", problem.diffusion if problem.mu is None else None)
    cached = space.cache.get(key)
    if cached is None:
        full = energy_matrix(space, problem)
        cached = full[space.free][:, space.free].tocsr()
        space.cache[key] = cached
    return cached


def zarantonello_step(
    space: Space,
    problem: ProblemSpec,
    u_prev: np.ndarray,
    delta: float,
    nonsym: SparseSystem | None = None,
) -> SparseSystem:
    """SPD system for the damped fixed-point update Phi(delta; u_prev).

    The solution w of  a(w, v) = a(u_prev, v) + delta [F(v) - b(u_prev, v)]
    for all free v, where a is the symmetric principal part and b the full
    non-symmetric form.  Passing the assembled non-symmetric system avoids
    re-assembly inside the outer loop.
    """
    if delta <= 0.0:
        raise StructureError("Zarantonello damping delta must be positive")
    u_prev = np.asarray(u_prev, dtype=float)
    if u_prev.shape[0] != space.dim:
        raise StructureError("iterate does not match space dimension")
    if nonsym is None:
        nonsym = assemble(space, problem)
    a_full = energy_matrix(space, problem)
    r_full = a_full @ u_prev + delta * (nonsym.load_full - nonsym.full @ u_prev)
    free = space.free
    lift = nonsym.lift
    return SparseSystem(
        matrix=_sym_matrix(space, problem),
        rhs=r_full[free] - a_full[free] @ lift,
        lift=lift,
        space=space,
        symmetric=True,
        full=a_full,
        load_full=r_full,
    )


def run_aisfem(
    problem: ProblemSpec,
    mesh0: Mesh,
    delta: float = 0.1,
    theta: float = 0.3,
    lambda_sym: float = 0.1,
    lambda_alg: float = 0.7,
    p: int = 1,
    tau: float | None = None,
    max_dofs: int | None = None,
    max_cum_dofs: int | None = None,
    max_levels: int | None = None,
    diagnostics: bool = False,
    nested: bool = True,
    marking: str = "binned",
) -> AdaptiveTrace:
    """Adaptive iteratively symmetrized loop for non-symmetric problems."""
    if not 0.0 < theta <= 1.0 or lambda_sym <= 0.0 or lambda_alg <= 0.0:
        raise StructureError("need theta in (0, 1] and positive stopping parameters")
    if problem.symmetric:
        pass  # allowed: delta=1 then converges in one outer step
    mark = doerfler_binned if marking == "binned" else doerfler_min
    trace = AdaptiveTrace(records=[], params=dict(
        alg="aisfem", delta=delta, theta=theta, lambda_sym=lambda_sym,
        lambda_alg=lambda_alg, p=p, tau=tau, max_dofs=max_dofs,
        max_cum_dofs=max_cum_dofs, max_levels=max_levels, nested=nested,
    ), meshes=[], columns=list(TRIPLE_COLUMNS))
    t_start = time.monotonic()

    mesh = mesh0
    space = build_space(mesh, p)
    hierarchy = Hierarchy([space])
    cum_elems = 0
    cum_dofs = 0
    cum_ops = 0
    ell = 0
    u = np.zeros(space.dim)

    while True:
        trace.meshes.append(mesh)
        nonsym = assemble(space, problem)
        if problem.dirichlet is not None:
            u = u.copy()
            u[space.dirichlet_mask] = nonsym.lift[space.dirichlet_mask]
        u_star = None
        if diagnostics and nonsym.n > 0:
            u_star = nonsym.full_vector(direct_solve(nonsym))

        def record(k, j, is_final, ind, sym_inc, alg_inc, ops):
            nonlocal cum_elems, cum_dofs
            cum_elems += mesh.n_triangles
            cum_dofs += space.dim
            alg_err = None
            if diagnostics and u_star is not None:
                alg_err = energy_norm(space, problem, u_star - u)
            trace.records.append(StepRecord(
                ell=ell, k=k, is_final=is_final,
                n_elements=mesh.n_triangles, n_dofs=space.dim,
                eta=ind.total, increment=alg_inc, alg_err=alg_err, err=None,
                cost_elems=cum_elems, cost_dofs=cum_dofs,
                time_s=time.monotonic() - t_start, ops=ops,
                extra={"j": j, "sym_increment": sym_inc, "alg_increment": alg_inc},
            ))

        ind = residual_indicators(space, u, problem)
        exhausted = nonsym.n == 0
        record(0, 0, exhausted, ind, None, None, cum_ops)

        k = 0
        sym_hist: list[float] = []
        done = exhausted
        while not done:
            k += 1
            if k > SOLVER_CAP:
                raise ContractError(f"symmetrization exceeded {SOLVER_CAP} steps")
            anchor = u
            system = zarantonello_step(space, problem, anchor, delta, nonsym)
            state = start_state(system, anchor[space.free])
            j = 0
            while True:
                j += 1
                if j > SOLVER_CAP:
                    raise ContractError(f"algebraic loop exceeded {SOLVER_CAP} steps")
                state = solver_step(system, hierarchy, state)
                u = system.full_vector(state.x)
                ind = residual_indicators(space, u, problem)
                sym_inc = energy_norm(space, problem, u - anchor)
                alg_inc = state.increment
                j_done = alg_inc <= lambda_alg * (lambda_sym * ind.total + sym_inc)
                k_done = j_done and sym_inc <= lambda_sym * ind.total
                record(k, j, k_done, ind, sym_inc, alg_inc, cum_ops + state.ops)
                if j_done:
                    break
            cum_ops += state.ops
            sym_hist.append(sym_inc)
            if len(sym_hist) > 50 and sym_hist[-1] > 10.0 * sym_hist[-51]:
                raise ContractError(
                    "symmetrization increments diverge: damping delta too large"
                )
            done = sym_inc <= lambda_sym * ind.total

        final = trace.records[-1]
        if tau is not None and final.eta <= tau:
            trace.stop_reason = "tau"
            break
        if max_dofs is not None and space.dim >= max_dofs:
            trace.stop_reason = "max_dofs"
            break
        if max_cum_dofs is not None and cum_dofs >= max_cum_dofs:
            trace.stop_reason = "max_cum_dofs"
            break
        if max_levels is not None and ell + 1 >= max_levels:
            trace.stop_reason = "max_levels"
            break

        marked = mark(ind, theta)
        if not marked:
            trace.stop_reason = "estimator_zero"
            break
        new_mesh = refine(mesh, marked, edges="all")
        new_space = build_space(new_mesh, p)
        hierarchy.extend(new_space)
        u = (prolongate(space, new_space, u)
             if nested else np.zeros(new_space.dim))
        mesh, space = new_mesh, new_space
        ell += 1

    trace.final_coeffs = u
    trace.final_space = space
    return trace


# ---------------------------------------------------------------------------
# Kacanov linearization and the energy
# ---------------------------------------------------------------------------


def kacanov_step(
    space: Space, problem: ProblemSpec, u_prev: np.ndarray
) -> SparseSystem:
    """SPD system with diffusion mu(|grad u_prev|^2) at quadrature points."""
    if problem.mu is None:
        raise StructureError("kacanov_step requires a quasilinear problem")
    u_prev = np.asarray(u_prev, dtype=float)
    alpha, big_l = problem.mu_bounds
    system = assemble(space, problem, linearization_point=u_prev)
    from .fespace import diffusion_at_quadrature

    vals = diffusion_at_quadrature(space, problem, u_prev)
    if vals.size and (vals.min() < alpha - 1e-12 or vals.max() > big_l / 3.0 + 1e-12):
        raise ContractError(
            f"mu values [{vals.min():.6g}, {vals.max():.6g}] violate the "
            f"declared growth bounds [{alpha}, {big_l / 3.0}]"
        )
    return system


def _mu_primitive(problem: ProblemSpec, s: np.ndarray) -> np.ndarray:
    """Integral of mu over [0, s], vectorized over s >= 0."""
    if problem.mu_antiderivative is not None:
        m = problem.mu_antiderivative
        return np.asarray(m(s), dtype=float) - float(m(0.0))
    from scipy.integrate import quad

    flat = np.asarray(s, dtype=float).ravel()
    out = np.array([
        quad(problem.mu, 0.0, si, epsabs=1e-12, epsrel=1e-12)[0] for si in flat
    ])
    return out.reshape(np.shape(s))


def _load_vector(space: Space, problem: ProblemSpec) -> np.ndarray:
    key = ("load_vector", problem.f, problem.fvec)
    cached = space.cache.get(key)
    if cached is None:
        spec = ProblemSpec(diffusion=1.0, f=problem.f, fvec=problem.fvec)
        cached = assemble(space, spec).load_full
        space.cache[key] = cached
    return cached


def energy(space: Space, problem: ProblemSpec, u: np.ndarray) -> float:
    """E(v) = 1/2 int_Omega int_0^{|grad v|^2} mu(t) dt dx - F(v)."""
    if problem.mu is None:
        raise StructureError("energy requires a quasilinear problem")
    u = np.asarray(u, dtype=float)
    if u.shape[0] != space.dim:
        raise StructureError("coefficient vector does not match space dimension")
    _, _, w = space.quad_points()
    _, _, _, area = space.geometry()
    detj = 2.0 * area
    grads = space.physical_gradients()
    gu = np.einsum("tqli,tl->tqi", grads, u[space.elem_dofs])
    g2 = np.sum(gu * gu, axis=2)
    bulk = 0.5 * float(np.einsum("t,q,tq->", detj, w, _mu_primitive(problem, g2)))
    return bulk - float(_load_vector(space, problem) @ u)


def dist2(space: Space, problem: ProblemSpec, v: np.ndarray, w: np.ndarray) -> float:
    """Energy difference dist^2(v, w) = E(w) - E(v)."""
    return energy(space, problem, w) - energy(space, problem, v)


def nonlinear_oracle(
    space: Space, problem: ProblemSpec, tol: float = 1e-12, max_iter: int = 200
) -> np.ndarray:
    """Discrete quasilinear solution by Picard iteration with exact solves."""
    u = np.zeros(space.dim)
    for _ in range(max_iter):
        system = kacanov_step(space, problem, u)
        u_new = system.full_vector(direct_solve(system))
        if energy_norm(space, problem, u_new - u) <= tol * max(
            1.0, energy_norm(space, problem, u_new)
        ):
            return u_new
        u = u_new
    raise ContractError("Picard oracle did not converge")


def run_ailfem(
    problem: ProblemSpec,
    mesh0: Mesh,
    theta: float = 0.3,
    lambda_lin: float = 0.7,
    alpha_min: float = 100.0,
    j_max: int = 1,
    rho: float = 0.5,
    p: int = 1,
    tau: float | None = None,
    max_dofs: int | None = None,
    max_cum_dofs: int | None = None,
    max_levels: int | None = None,
    diagnostics: bool = False,
    nested: bool = True,
    marking: str = "binned",
) -> AdaptiveTrace:
    """Adaptive iteratively linearized loop for the quasilinear problem."""
    if problem.mu is None:
        raise StructureError("run_ailfem requires a quasilinear problem")
    if p != 1:
        raise StructureError("the quasilinear estimator is only stable for p = 1")
    if not 0.0 < theta <= 1.0 or lambda_lin <= 0.0 or not 0.0 < rho < 1.0:
        raise StructureError("invalid adaptivity parameters")
    mark = doerfler_binned if marking == "binned" else doerfler_min
    trace = AdaptiveTrace(records=[], params=dict(
        alg="ailfem", theta=theta, lambda_lin=lambda_lin, alpha_min=alpha_min,
        j_max=j_max, rho=rho, p=p, tau=tau, max_dofs=max_dofs,
        max_cum_dofs=max_cum_dofs, max_levels=max_levels, nested=nested,
    ), meshes=[], columns=list(AILFEM_COLUMNS))
    t_start = time.monotonic()

    mesh = mesh0
    space = build_space(mesh, p)
    hierarchy = Hierarchy([space])
    cum_elems = 0
    cum_dofs = 0
    cum_ops = 0
    ell = 0
    u = np.zeros(space.dim)
    cur_alpha_min = float(alpha_min)
    cur_j_max = int(j_max)

    while True:
        trace.meshes.append(mesh)
        e_mat_free = energy_matrix(space, problem)[space.free][:, space.free].tocsr()
        u_star = None
        if diagnostics and space.n_free > 0:
            u_star = nonlinear_oracle(space, problem)

        def record(k, j, is_final, ind, sym_inc, alg_inc, e_u, d2, a_ratio, ops):
            nonlocal cum_elems, cum_dofs
            cum_elems += mesh.n_triangles
            cum_dofs += space.dim
            alg_err = None
            if diagnostics and u_star is not None:
                alg_err = energy_norm(space, problem, u_star - u)
            trace.records.append(StepRecord(
                ell=ell, k=k, is_final=is_final,
                n_elements=mesh.n_triangles, n_dofs=space.dim,
                eta=ind.total, increment=alg_inc, alg_err=alg_err, err=None,
                cost_elems=cum_elems, cost_dofs=cum_dofs,
                time_s=time.monotonic() - t_start, ops=ops,
                extra={
                    "j": j, "sym_increment": sym_inc, "alg_increment": alg_inc,
                    "energy": e_u, "dist2": d2, "alpha_ratio": a_ratio,
                    "alpha_min": cur_alpha_min, "J_max": cur_j_max,
                },
            ))

        ind = residual_indicators(space, u, problem)
        exhausted = space.n_free == 0
        record(0, 0, exhausted, ind, None, None,
               energy(space, problem, u), None, None, cum_ops)

        k = 0
        done = exhausted
        while not done:
            k += 1
            if k > SOLVER_CAP:
                raise ContractError(f"linearization exceeded {SOLVER_CAP} steps")
            anchor = u
            e_anchor = energy(space, problem, anchor)
            system = kacanov_step(space, problem, anchor)
            state = start_state(system, anchor[space.free])
            j = 0
            while True:
                j += 1
                if j > SOLVER_CAP:
                    raise ContractError(f"algebraic loop exceeded {SOLVER_CAP} steps")
                state = solver_step(system, hierarchy, state, energy_matrix=e_mat_free)
                u = system.full_vector(state.x)
                ind = residual_indicators(space, u, problem)
                e_u = energy(space, problem, u)
                d2 = e_anchor - e_u
                diff = energy_norm(space, problem, u - anchor)
                equal = diff <= _EQUAL_FLOOR * max(
                    1.0, energy_norm(space, problem, u)
                )
                a_ratio = 0.0 if equal else d2 / diff**2
                j_done = (
                    a_ratio >= cur_alpha_min
                    or equal
                    or (a_ratio > _EQUAL_FLOOR and j > cur_j_max)
                )
                k_done = j_done and d2 <= lambda_lin * ind.total2
                record(k, j, k_done, ind, diff, state.increment, e_u, d2,
                       a_ratio, cum_ops + state.ops)
                if j_done:
                    break
            cum_ops += state.ops
            if j > cur_j_max:
                cur_j_max = j
                cur_alpha_min *= rho
            if e_u > e_anchor + 1e-10 * max(1.0, abs(e_anchor)):
                raise ContractError(
                    f"energy increased across linearization step {k} on level "
                    f"{ell}: {e_anchor!r} -> {e_u!r}"
                )
            done = d2 <= lambda_lin * ind.total2

        final = trace.records[-1]
        if tau is not None and final.eta <= tau:
            trace.stop_reason = "tau"
            break
        if max_dofs is not None and space.dim >= max_dofs:
            trace.stop_reason = "max_dofs"
            break
        if max_cum_dofs is not None and cum_dofs >= max_cum_dofs:
            trace.stop_reason = "max_cum_dofs"
            break
        if max_levels is not None and ell + 1 >= max_levels:
            trace.stop_reason = "max_levels"
            break

        marked = mark(ind, theta)
        if not marked:
            trace.stop_reason = "estimator_zero"
            break
        new_mesh = refine(mesh, marked, edges="all")
        new_space = build_space(new_mesh, p)
        hierarchy.extend(new_space)
        u = (prolongate(space, new_space, u)
             if nested else np.zeros(new_space.dim))
        mesh, space = new_mesh, new_space
        ell += 1

    trace.final_coeffs = u
    trace.final_space = space
    return trace
