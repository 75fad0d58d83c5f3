"""Adaptive loop driver: solve -> estimate -> mark -> refine.

The driver interleaves estimation with every algebraic solver step and
stops the inner loop at the first k with

    |||u^k - u^{k-1}||| <= lambda_alg * eta(u^k),

then marks with the Doerfler criterion and refines, carrying the final
iterate to the next level by prolongation (nested iteration).  Every
iterate (level, step) is recorded, together with cumulative cost
counters summing mesh size and dimension over all previous records.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, StructureError
from .estimator import residual_indicators
from .fespace import (
    ProblemSpec,
    Space,
    assemble,
    build_space,
    energy_matrix,
    energy_norm,
    prolongate,
)
from .linsolve import Hierarchy, direct_solve, solver_step, start_state
from .marking import doerfler_binned, doerfler_min
from .mesh import Mesh, refine

SOLVER_CAP = 10_000

BASE_COLUMNS = [
    "ell",
    "k",
    "is_final",
    "n_elements",
    "n_dofs",
    "eta",
    "increment",
    "alg_err",
    "err",
    "cost_elems",
    "cost_dofs",
    "time_s",
    "ops",
]


@dataclass
class StepRecord:
    """One row of the adaptive trace (one iterate u_ell^k)."""

    ell: int
    k: int
    is_final: bool
    n_elements: int
    n_dofs: int
    eta: float
    increment: float | None
    alg_err: float | None
    err: float | None
    cost_elems: int
    cost_dofs: int
    time_s: float
    ops: int
    extra: dict = field(default_factory=dict)


@dataclass
class AdaptiveTrace:
    records: list[StepRecord]
    params: dict
    meshes: list[Mesh]
    columns: list[str] = field(default_factory=lambda: list(BASE_COLUMNS))
    stop_reason: str = ""
    final_coeffs: np.ndarray | None = None
    final_space: Space | None = None

    def final_records(self) -> list[StepRecord]:
        return [r for r in self.records if r.is_final]

    def solver_counts(self) -> list[int]:
        """Number of algebraic solver steps taken on each level."""
        counts: dict[int, int] = {}
        for r in self.records:
            if r.k > 0:
                counts[r.ell] = max(counts.get(r.ell, 0), r.k)
        return [counts.get(ell, 0) for ell in range(max(counts, default=-1) + 1)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for r in self.records:
            row = []
            for col in self.columns:
                if col in ("ell", "k", "n_elements", "n_dofs", "cost_elems", "cost_dofs", "ops"):
                    row.append(str(getattr(r, col)))
                elif col == "is_final":
                    row.append("1" if r.is_final else "0")
                elif col in ("eta", "increment", "alg_err", "err", "time_s"):
                    val = getattr(r, col)
                    row.append("" if val is None else repr(float(val)))
                else:
                    val = r.extra.get(col)
                    row.append("" if val is None else
                               (str(val) if isinstance(val, (int, np.integer)) else repr(float(val))))
            buf.write(",".join(row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def quasi_error(record: StepRecord) -> float:
    """H = |||u_ell^* - u_ell^k||| + eta_ell(u_ell^k) (needs diagnostics)."""
    if record.alg_err is None:
        raise StructureError("quasi_error needs diagnostics fields")
    return record.alg_err + record.eta


def cost(trace: AdaptiveTrace, upto: int) -> tuple[int, int]:
    """Cumulative (elements, dofs) over records 0..upto inclusive."""
    if not 0 <= upto < len(trace.records):
        raise StructureError("step index outside trace")
    ce = sum(r.n_elements for r in trace.records[: upto + 1])
    cd = sum(r.n_dofs for r in trace.records[: upto + 1])
    return ce, cd


@dataclass
class RLinearFit:
    C: float
    q: float
    tail: float
    converged: bool


def check_full_rlinear(values) -> RLinearFit:
    """Fit v_{m+n} <= C q^n v_m: q from a log-linear envelope fit, C as the
    smallest constant making the bound hold for all pairs; also the
    tail-summability constant max_M (sum_{k>M} v_k) / v_M.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 10:
        raise StructureError("need at least 10 values")
    if np.any(v <= 0.0):
        raise StructureError("values must be positive")
    logv = np.log(v)
    i = np.arange(v.size)
    slope = np.polyfit(i, logv, 1)[0]
    q = float(np.exp(slope))
    converged = q < 1.0
    q_eff = min(q, 1.0)
    diff = logv[None, :] - logv[:, None]  # diff[m, m+n]
    n = i[None, :] - i[:, None]
    mask = n > 0
    c = float(np.exp(np.max(diff[mask] - n[mask] * np.log(q_eff))))
    tails = np.cumsum(v[::-1])[::-1]  # tails[M] = sum_{k>=M} v_k
    tail = float(np.max(tails[1:] / v[:-1]))
    return RLinearFit(C=max(c, 1.0), q=q, tail=tail, converged=converged)


def rate_fit(x, y, window: float = 0.5) -> float:
    """Least-squares slope of log y vs log x over the trailing window."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 3:
        raise StructureError("need >= 3 paired values")
    n = max(3, int(np.ceil(window * x.size)))
    xs, ys = np.log(x[-n:]), np.log(y[-n:])
    if np.ptp(xs) < 1e-12:
        raise StructureError("degenerate x spread")
    return float(np.polyfit(xs, ys, 1)[0])


def true_energy_error(space: Space, problem: ProblemSpec, u_full: np.ndarray) -> float:
    """|||u^* - u_h||| by quadrature of the exact gradient."""
    if problem.exact_grad is None:
        raise StructureError("problem has no exact gradient")
    phys, _, w = space.quad_points()
    _, _, _, area = space.geometry()
    detj = 2.0 * area
    grads = space.physical_gradients()
    gu = np.einsum("tqli,tl->tqi", grads, u_full[space.elem_dofs])
    gstar = np.asarray(problem.exact_grad(phys.reshape(-1, 2)), dtype=float).reshape(gu.shape)
    diff = gstar - gu
    if problem.mu is not None:
        a_elem = np.ones(space.mesh.n_triangles)
    else:
        from .fespace import _scalar_field

        a_elem = _scalar_field(problem.diffusion, space.centroids())
    err2 = np.einsum("t,q,tq->", detj * a_elem, w, np.sum(diff * diff, axis=2))
    return float(np.sqrt(max(err2, 0.0)))


def run_afem(
    problem: ProblemSpec,
    mesh0: Mesh,
    theta: float = 0.5,
    lambda_alg: float = 0.01,
    p: int = 1,
    tau: float | None = None,
    max_dofs: int | None = None,
    max_cum_dofs: int | None = None,
    max_levels: int | None = None,
    diagnostics: bool = False,
    nested: bool = True,
    marking: str = "binned",
) -> AdaptiveTrace:
    """Adaptive loop for the symmetric linear problem."""
    if not 0.0 < theta <= 1.0 or lambda_alg <= 0.0:
        raise StructureError("need theta in (0, 1] and lambda_alg > 0")
    mark = doerfler_binned if marking == "binned" else doerfler_min
    trace = AdaptiveTrace(records=[], params=dict(
        alg="afem", theta=theta, lambda_alg=lambda_alg, p=p, tau=tau,
        max_dofs=max_dofs, max_cum_dofs=max_cum_dofs, max_levels=max_levels,
        nested=nested, marking=marking,
    ), meshes=[])
    t_start = time.monotonic()

    mesh = mesh0
    space = build_space(mesh, p)
    hierarchy = Hierarchy([space])
    x_free = np.zeros(space.n_free)
    cum_elems = 0
    cum_dofs = 0
    cum_ops = 0
    ell = 0

    while True:
        trace.meshes.append(mesh)
        system = assemble(space, problem)
        state = start_state(system, x_free)
        u = system.full_vector(state.x)
        u_star = None
        if diagnostics:
            u_star = system.full_vector(direct_solve(system))

        def record(k, is_final, eta, increment, ops):
            nonlocal cum_elems, cum_dofs
            cum_elems += mesh.n_triangles
            cum_dofs += space.dim
            alg_err = err = None
            if diagnostics:
                alg_err = energy_norm(space, problem, u_star - u)
                if problem.exact_grad is not None:
                    err = true_energy_error(space, problem, u)
            trace.records.append(
                StepRecord(
                    ell=ell, k=k, is_final=is_final,
                    n_elements=mesh.n_triangles, n_dofs=space.dim,
                    eta=eta, increment=increment, alg_err=alg_err, err=err,
                    cost_elems=cum_elems, cost_dofs=cum_dofs,
                    time_s=time.monotonic() - t_start, ops=ops,
                )
            )

        ind = residual_indicators(space, u, problem)
        exhausted = system.n == 0
        record(0, exhausted, ind.total, None, cum_ops)
        k = 0
        while not exhausted:
            k += 1
            if k > SOLVER_CAP:
                raise ContractError(
                    f"solver exceeded {SOLVER_CAP} steps on level {ell} without "
                    "meeting the stopping criterion"
                )
            state = solver_step(system, hierarchy, state)
            u = system.full_vector(state.x)
            ind = residual_indicators(space, u, problem)
            done = state.increment <= lambda_alg * ind.total
            record(k, done, ind.total, state.increment, cum_ops + state.ops)
            if done:
                break
        cum_ops += state.ops

        final = trace.records[-1]
        if tau is not None and (final.increment or 0.0) + final.eta <= tau:
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
        if nested:
            u_new = prolongate(space, new_space, u)
            x_free = u_new[new_space.free]
        else:
            x_free = np.zeros(new_space.n_free)
        mesh, space = new_mesh, new_space
        ell += 1

    trace.final_coeffs = u
    trace.final_space = space
    return trace
