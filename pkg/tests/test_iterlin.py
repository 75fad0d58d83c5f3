"""Fixed-point drivers: symmetrization and linearization building blocks."""

import numpy as np
import pytest

from afemkit.bench import get
from afemkit.errors import ContractError, StructureError
from afemkit.fespace import ProblemSpec, assemble, build_space, energy_norm
from afemkit.iterlin import (
    AILFEM_COLUMNS,
    TRIPLE_COLUMNS,
    _mu_primitive,
    dist2,
    energy,
    kacanov_step,
    nonlinear_oracle,
    run_ailfem,
    run_aisfem,
    zarantonello_step,
)
from afemkit.linsolve import direct_solve
from afemkit.mesh import initial_mesh, uniform_refine

SQUARE_COORDS = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
SQUARE_TRIS = [(0, 1, 2), (0, 2, 3)]


def square():
    return initial_mesh(SQUARE_COORDS, SQUARE_TRIS)


CONST_MU = ProblemSpec(
    diffusion=None,
    mu=lambda t: 3.0 + 0.0 * np.asarray(t),
    mu_antiderivative=lambda s: 3.0 * np.asarray(s, dtype=float),
    mu_bounds=(2.5, 9.5),
    f=1.0,
)


# ---------------------------------------------------------------------------
# Zarantonello symmetrization
# ---------------------------------------------------------------------------


def test_zarantonello_delta_one_symmetric_is_one_step_exact():
    # for a symmetric problem with delta = 1 the update lands on the
    # Galerkin solution from any starting iterate
    spec = ProblemSpec(diffusion=1.0, f=1.0)
    space = build_space(uniform_refine(square(), 2), 1)
    base = assemble(space, spec)
    exact = base.full_vector(direct_solve(base))
    rng = np.random.default_rng(0)
    start = rng.normal(size=space.dim)
    start[space.dirichlet_mask] = 0.0
    system = zarantonello_step(space, spec, start, 1.0)
    w = system.full_vector(direct_solve(system))
    assert np.allclose(w, exact, atol=1e-12)


def test_zarantonello_fixed_point_is_the_nonsymmetric_solution():
    bench = get("lshape_convection")
    space = build_space(bench.make_mesh(), 1)
    nonsym = assemble(space, bench.problem)
    u_star = nonsym.full_vector(direct_solve(nonsym))
    system = zarantonello_step(space, bench.problem, u_star, 0.1, nonsym)
    w = system.full_vector(direct_solve(system))
    assert np.allclose(w, u_star, atol=1e-11)


def test_zarantonello_rejects_bad_inputs():
    space = build_space(square(), 1)
    spec = ProblemSpec(diffusion=1.0, f=1.0)
    with pytest.raises(StructureError):
        zarantonello_step(space, spec, np.zeros(space.dim), 0.0)
    with pytest.raises(StructureError):
        zarantonello_step(space, spec, np.zeros(2), 0.5)


def test_aisfem_trace_and_rate_sanity():
    bench = get("lshape_convection")
    tr = run_aisfem(bench.problem, bench.make_mesh(), max_levels=6)
    assert tr.columns == TRIPLE_COLUMNS
    finals = tr.final_records()
    assert len(finals) == len(tr.meshes)
    assert finals[-1].eta < finals[0].eta
    for r in tr.records:
        if r.is_final and r.k > 0:
            # outer stopping: the symmetrization increment is small
            assert r.extra["sym_increment"] <= 0.1 * r.eta + 1e-12


def test_aisfem_inner_stopping_criteria_hold_on_every_row():
    bench = get("lshape_convection")
    tr = run_aisfem(bench.problem, bench.make_mesh(), max_levels=5)
    by_level_k = {}
    for r in tr.records:
        if r.k > 0:
            by_level_k.setdefault((r.ell, r.k), []).append(r)
    for rows in by_level_k.values():
        last = rows[-1]
        alg = last.extra["alg_increment"]
        sym = last.extra["sym_increment"]
        assert alg <= 0.7 * (0.1 * last.eta + sym) + 1e-12


def test_aisfem_divergence_guard_trips_for_huge_damping():
    bench = get("lshape_convection")
    with pytest.raises(ContractError):
        run_aisfem(bench.problem, bench.make_mesh(), delta=50.0, max_levels=2)


def test_aisfem_rejects_bad_parameters():
    bench = get("lshape_convection")
    with pytest.raises(StructureError):
        run_aisfem(bench.problem, bench.make_mesh(), theta=0.0)
    with pytest.raises(StructureError):
        run_aisfem(bench.problem, bench.make_mesh(), lambda_sym=0.0)


# ---------------------------------------------------------------------------
# Kacanov linearization
# ---------------------------------------------------------------------------


def test_kacanov_constant_mu_is_one_step_exact():
    space = build_space(uniform_refine(square(), 2), 1)
    system = kacanov_step(space, CONST_MU, np.zeros(space.dim))
    u1 = system.full_vector(direct_solve(system))
    system2 = kacanov_step(space, CONST_MU, u1)
    u2 = system2.full_vector(direct_solve(system2))
    assert np.allclose(u1, u2, atol=1e-13)


def test_kacanov_constant_mu_energy_ratio():
    # dist^2(u, v) = mu/2 |||u - v|||^2 for constant mu, so the ratio
    # against the squared increment is exactly mu / 2
    space = build_space(uniform_refine(square(), 2), 1)
    anchor = np.zeros(space.dim)
    system = kacanov_step(space, CONST_MU, anchor)
    u = system.full_vector(direct_solve(system))
    d2 = dist2(space, CONST_MU, u, anchor)
    diff = energy_norm(space, CONST_MU, u - anchor)
    assert d2 / diff**2 == pytest.approx(1.5, rel=1e-10)


def test_kacanov_requires_quasilinear_problem():
    space = build_space(square(), 1)
    with pytest.raises(StructureError):
        kacanov_step(space, ProblemSpec(diffusion=1.0, f=1.0), np.zeros(space.dim))


def test_kacanov_guards_mu_bounds():
    # mu(0) = 3 lies outside the declared admissible window [3.2, L/3]
    bad = ProblemSpec(
        diffusion=None,
        mu=lambda t: 3.0 + 0.0 * np.asarray(t),
        mu_antiderivative=lambda s: 3.0 * np.asarray(s, dtype=float),
        mu_bounds=(3.2, 12.0),
        f=1.0,
    )
    space = build_space(uniform_refine(square(), 1), 1)
    with pytest.raises(ContractError):
        kacanov_step(space, bad, np.zeros(space.dim))


def test_energy_closed_form_for_constant_mu():
    # E(v) = mu/2 |||v|||^2 - F(v)
    space = build_space(uniform_refine(square(), 2), 1)
    rng = np.random.default_rng(1)
    v = rng.normal(size=space.dim)
    unit_load = assemble(space, ProblemSpec(diffusion=1.0, f=1.0)).load_full
    expected = 1.5 * energy_norm(space, CONST_MU, v) ** 2 - float(unit_load @ v)
    assert energy(space, CONST_MU, v) == pytest.approx(expected, rel=1e-12)
    assert energy(space, CONST_MU, np.zeros(space.dim)) == 0.0


def test_mu_primitive_quadrature_matches_antiderivative():
    bench = get("lshape_nonlinear")
    prob = bench.problem
    s = np.array([0.0, 0.3, 1.7, 12.0])
    exact = _mu_primitive(prob, s)
    from dataclasses import replace

    numeric = _mu_primitive(replace(prob, mu_antiderivative=None), s)
    assert np.allclose(numeric, exact, atol=1e-10)


def test_nonlinear_oracle_satisfies_fixed_point():
    bench = get("lshape_nonlinear")
    space = build_space(bench.make_mesh(), 1)
    u = nonlinear_oracle(space, bench.problem)
    system = kacanov_step(space, bench.problem, u)
    w = system.full_vector(direct_solve(system))
    assert energy_norm(space, bench.problem, w - u) <= 1e-10
    # the oracle minimizes the energy among nearby perturbations
    e0 = energy(space, bench.problem, u)
    rng = np.random.default_rng(2)
    for _ in range(5):
        d = rng.normal(size=space.dim) * 1e-3
        d[space.dirichlet_mask] = 0.0
        assert energy(space, bench.problem, u + d) >= e0 - 1e-12


def test_ailfem_trace_energy_monotone_and_caps():
    bench = get("lshape_nonlinear")
    tr = run_ailfem(bench.problem, bench.make_mesh(), max_levels=8)
    assert tr.columns == AILFEM_COLUMNS
    finals = tr.final_records()
    assert finals[-1].eta < finals[0].eta
    # energy never increases within a level
    per_level = {}
    for r in tr.records:
        per_level.setdefault(r.ell, []).append(r.extra["energy"])
    for vals in per_level.values():
        arr = np.array(vals)
        # intermediate algebraic iterates may wiggle at rounding level
        assert np.all(np.diff(arr) <= 1e-8 * np.maximum(1.0, np.abs(arr[:-1])))
    assert max(r.extra["j"] for r in tr.records) <= 20


def test_ailfem_adapts_alpha_min_and_j_max():
    bench = get("lshape_nonlinear")
    tr = run_ailfem(bench.problem, bench.make_mesh(), max_levels=8)
    pairs = [(r.extra["J_max"], r.extra["alpha_min"]) for r in tr.records]
    jmaxs = [p[0] for p in pairs]
    amins = [p[1] for p in pairs]
    # the step cap only grows and the ratio threshold only shrinks
    assert all(b >= a for a, b in zip(jmaxs, jmaxs[1:]))
    assert all(b <= a for a, b in zip(amins, amins[1:]))
    # each cap increase halves the threshold
    assert amins[0] == 100.0 and jmaxs[0] == 1
    for (j0, a0), (j1, a1) in zip(pairs, pairs[1:]):
        if j1 > j0:
            assert a1 == pytest.approx(a0 * 0.5 ** (j1 - j0))


def test_ailfem_rejects_bad_inputs():
    bench = get("lshape_nonlinear")
    with pytest.raises(StructureError):
        run_ailfem(ProblemSpec(diffusion=1.0, f=1.0), bench.make_mesh())
    with pytest.raises(StructureError):
        run_ailfem(bench.problem, bench.make_mesh(), p=2)
    with pytest.raises(StructureError):
        run_ailfem(bench.problem, bench.make_mesh(), rho=1.5)


def test_ailfem_diagnostics_track_nonlinear_oracle():
    bench = get("lshape_nonlinear")
    tr = run_ailfem(bench.problem, bench.make_mesh(), max_levels=4,
                    diagnostics=True)
    for r in tr.final_records():
        if r.k > 0:
            # the final iterate is close to the discrete fixed point
            assert r.alg_err <= max(1.0, r.eta)
    last = tr.final_records()[-1]
    assert last.alg_err < tr.final_records()[0].eta
