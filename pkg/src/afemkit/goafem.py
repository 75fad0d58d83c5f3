"""Goal-oriented adaptive driver: simultaneous primal/dual solves.

The primal problem a(u, v) = F(v) and the dual problem a(v, z) = G(v)
share the same symmetric matrix, so each adaptive level performs a
two-right-hand-side solve with a shared hierarchy preconditioner.  The
quantity of interest is reported through the corrected value
G(u) + [F(z) - a(u, z)], whose error decays at the product rate of the
two estimators.  Marking combines both Doerfler sets truncated to the
smaller cardinality.
"""

from __future__ import annotations

import time

import numpy as np

from .afem import BASE_COLUMNS, SOLVER_CAP, AdaptiveTrace, StepRecord
from .errors import ContractError, StructureError
from .estimator import dual_indicators, residual_indicators
from .fespace import (
    ProblemSpec,
    Space,
    SparseSystem,
    assemble,
    build_space,
    energy_norm,
    prolongate,
)
from .linsolve import Hierarchy, direct_solve, solver_step, start_state
from .marking import combined_mark
from .mesh import Mesh, refine

GOAL_COLUMNS = BASE_COLUMNS + ["zeta", "dual_increment", "goal_value", "goal_err"]


def dual_system(primal: SparseSystem, problem: ProblemSpec) -> SparseSystem:
    """System for the dual problem reusing the primal matrix.

    Only the load changes: the goal data (g, g_vec) replaces (f, f_vec)
    and the Dirichlet data is zero, so the free-DOF matrix, the full
    operator and the sparsity are shared object-identically.
    """
    if problem.goal_g is None and problem.goal_gvec is None:
        raise StructureError("problem has no goal data")
    if not problem.symmetric:
        raise StructureError("goal-oriented driver requires a symmetric problem")
    space = primal.space
    d = problem.dual()
    load_spec = ProblemSpec(diffusion=1.0, f=d.f, fvec=d.fvec)
    goal_load = assemble(space, load_spec).load_full
    return SparseSystem(
        matrix=primal.matrix,
        rhs=goal_load[space.free],
        lift=np.zeros(space.dim),
        space=space,
        symmetric=True,
        full=primal.full,
        load_full=goal_load,
    )


def discrete_goal(space: Space, problem: ProblemSpec, u: np.ndarray, z: np.ndarray,
                  primal: SparseSystem | None = None,
                  dual: SparseSystem | None = None) -> float:
    """Corrected goal value G(u) + [F(z) - a(u, z)].

    The correction vanishes at the exact discrete primal solution by the
    Galerkin property, and doubles the convergence rate for inexact
    iterates.  Passing the assembled systems avoids re-assembly.
    """
    if primal is None:
        primal = assemble(space, problem)
    if dual is None:
        dual = dual_system(primal, problem)
    g_u = float(dual.load_full @ u)
    f_z = float(primal.load_full @ z)
    a_uz = float(z @ (primal.full @ u))
    return g_u + (f_z - a_uz)


def goal_value(space: Space, problem: ProblemSpec, u: np.ndarray) -> float:
    """Plain goal value G(u) without the dual correction."""
    primal = assemble(space, problem)
    return float(dual_system(primal, problem).load_full @ u)


def run_goafem(
    problem: ProblemSpec,
    mesh0: Mesh,
    theta: float = 0.3,
    lambda_alg: float = 0.7,
    p: int = 1,
    tau: float | None = None,
    max_dofs: int | None = None,
    max_cum_dofs: int | None = None,
    max_levels: int | None = None,
    diagnostics: bool = False,
    nested: bool = True,
    reference_goal: float | None = None,
) -> AdaptiveTrace:
    """Goal-oriented adaptive loop (primal and dual in lockstep)."""
    if not 0.0 < theta <= 1.0 or lambda_alg <= 0.0:
        raise StructureError("need theta in (0, 1] and lambda_alg > 0")
    trace = AdaptiveTrace(records=[], params=dict(
        alg="goafem", theta=theta, lambda_alg=lambda_alg, p=p, tau=tau,
        max_dofs=max_dofs, max_cum_dofs=max_cum_dofs, max_levels=max_levels,
        nested=nested, reference_goal=reference_goal,
    ), meshes=[], columns=list(GOAL_COLUMNS))
    t_start = time.monotonic()

    mesh = mesh0
    space = build_space(mesh, p)
    hierarchy = Hierarchy([space])
    xu = np.zeros(space.n_free)
    xz = np.zeros(space.n_free)
    cum_elems = 0
    cum_dofs = 0
    cum_ops = 0
    ell = 0

    while True:
        trace.meshes.append(mesh)
        sys_u = assemble(space, problem)
        sys_z = dual_system(sys_u, problem)  # shares the matrix object, so
        # the hierarchy preconditioner is built once for both solves
        st_u = start_state(sys_u, xu)
        st_z = start_state(sys_z, xz)
        u = sys_u.full_vector(st_u.x)
        z = sys_z.full_vector(st_z.x)
        u_star = z_star = None
        if diagnostics and sys_u.n > 0:
            u_star = sys_u.full_vector(direct_solve(sys_u))
            z_star = sys_z.full_vector(direct_solve(sys_z))

        def record(k, is_final, ind_u, ind_z, inc_u, inc_z, ops):
            nonlocal cum_elems, cum_dofs
            cum_elems += mesh.n_triangles
            cum_dofs += space.dim
            alg_err = err = None
            if diagnostics and u_star is not None:
                alg_err = energy_norm(space, problem, u_star - u)
            gval = discrete_goal(space, problem, u, z, primal=sys_u, dual=sys_z)
            extra = {
                "zeta": ind_z.total,
                "dual_increment": inc_z,
                "goal_value": gval,
                "goal_err": (abs(reference_goal - gval)
                             if reference_goal is not None else None),
            }
            if diagnostics and z_star is not None:
                extra["dual_alg_err"] = energy_norm(space, problem, z_star - z)
            trace.records.append(StepRecord(
                ell=ell, k=k, is_final=is_final,
                n_elements=mesh.n_triangles, n_dofs=space.dim,
                eta=ind_u.total, increment=inc_u, alg_err=alg_err, err=err,
                cost_elems=cum_elems, cost_dofs=cum_dofs,
                time_s=time.monotonic() - t_start, ops=ops, extra=extra,
            ))

        ind_u = residual_indicators(space, u, problem)
        ind_z = dual_indicators(space, z, problem)
        exhausted = sys_u.n == 0
        record(0, exhausted, ind_u, ind_z, None, None, cum_ops)
        done_u = done_z = exhausted
        k = 0
        while not (done_u and done_z):
            k += 1
            if k > SOLVER_CAP:
                raise ContractError(
                    f"solver exceeded {SOLVER_CAP} steps on level {ell}"
                )
            inc_u = inc_z = None
            if not done_u:
                st_u = solver_step(sys_u, hierarchy, st_u)
                u = sys_u.full_vector(st_u.x)
                ind_u = residual_indicators(space, u, problem)
                inc_u = st_u.increment
            if not done_z:
                st_z = solver_step(sys_z, hierarchy, st_z)
                z = sys_z.full_vector(st_z.x)
                ind_z = dual_indicators(space, z, problem)
                inc_z = st_z.increment
            if not done_u:
                done_u = st_u.increment <= lambda_alg * ind_u.total
            if not done_z:
                done_z = st_z.increment <= lambda_alg * ind_z.total
            record(k, done_u and done_z, ind_u, ind_z, inc_u, inc_z,
                   cum_ops + st_u.ops + st_z.ops)
        cum_ops += st_u.ops + st_z.ops

        final = trace.records[-1]
        eta_zeta = final.eta * final.extra["zeta"]
        if tau is not None and eta_zeta <= tau:
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

        marked = combined_mark(ind_u, ind_z, theta)
        if not marked:
            trace.stop_reason = "estimator_zero"
            break
        new_mesh = refine(mesh, marked, edges="all")
        new_space = build_space(new_mesh, p)
        hierarchy.extend(new_space)
        if nested:
            xu = prolongate(space, new_space, u)[new_space.free]
            xz = prolongate(space, new_space, z)[new_space.free]
        else:
            xu = np.zeros(new_space.n_free)
            xz = np.zeros(new_space.n_free)
        mesh, space = new_mesh, new_space
        ell += 1

    trace.final_coeffs = u
    trace.final_space = space
    trace.params["final_dual_coeffs"] = z
    return trace
