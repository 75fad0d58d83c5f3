"""Command-line entry point: run, sweep, mesh-info, rates, verify.

Every data-producing subcommand writes CSV plus a JSON manifest with the
parameters, library versions and timings, so runs are reproducible from
their outputs alone.  The ``AFEMKIT_THREADS`` environment variable caps
the process parallelism of parameter sweeps; single-cell runs are
sequential and deterministic.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .afem import rate_fit, run_afem
from .bench import REGISTRY, Benchmark, get
from .errors import AfemError
from .goafem import run_goafem
from .iterlin import run_ailfem, run_aisfem
from .mesh import load_binary, load_text, shape_regularity

ALGORITHMS = ("afem", "goafem", "aisfem", "ailfem")


def _threads() -> int:
    raw = os.environ.get("AFEMKIT_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n) if n > 0 else max(1, os.cpu_count() or 1)


def _driver_params(args, bench: Benchmark) -> dict:
    """Merge benchmark defaults with explicit CLI overrides."""
    params = dict(bench.defaults)
    mapping = {
        "p": "p", "theta": "theta", "lambda_alg": "lambda_alg",
        "lambda_sym": "lambda_sym", "lambda_lin": "lambda_lin",
        "delta": "delta", "alpha_min": "alpha_min", "j_max": "j_max",
        "rho": "rho",
    }
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            params[key] = val
    for key in ("tau", "max_dofs", "max_cum_dofs", "max_levels"):
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    if getattr(args, "no_nested", False):
        params["nested"] = False
    if getattr(args, "diagnostics", False):
        params["diagnostics"] = True
    return params


def _run_driver(alg: str, bench: Benchmark, params: dict):
    mesh0 = bench.make_mesh()
    if alg == "afem":
        return run_afem(bench.problem, mesh0, **params)
    if alg == "goafem":
        params = dict(params)
        params.setdefault("reference_goal", bench.reference_goal)
        return run_goafem(bench.problem, mesh0, **params)
    if alg == "aisfem":
        return run_aisfem(bench.problem, mesh0, **params)
    if alg == "ailfem":
        return run_ailfem(bench.problem, mesh0, **params)
    raise AfemError(f"unknown algorithm {alg!r}")


def _manifest(path: str, command: str, params: dict, timings: dict,
              extra: dict | None = None) -> None:
    import scipy

    data = {
        "command": command,
        "parameters": params,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "afemkit": __version__,
        },
        "threads": _threads(),
        "timings": timings,
    }
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _cmd_run(args) -> int:
    bench = get(args.bench)
    alg = args.alg or bench.algorithm
    params = _driver_params(args, bench)
    repeats = []
    trace = None
    for _ in range(max(1, args.repeat)):
        t0 = time.monotonic()
        trace = _run_driver(alg, bench, params)
        repeats.append(time.monotonic() - t0)
    trace.to_csv(args.out)
    if args.dump_indicators:
        from .estimator import residual_indicators

        ind = residual_indicators(
            trace.final_space, trace.final_coeffs, bench.problem
        )
        with open(args.dump_indicators, "w") as fh:
            fh.write("element,eta2\n")
            for i, v in enumerate(ind.eta2):
                fh.write(f"{i},{float(v)!r}\n")
    final = trace.final_records()[-1]
    _manifest(
        args.out + ".manifest.json", "run",
        dict(bench=args.bench, alg=alg, **params),
        {"wall_s": repeats, "median_s": statistics.median(repeats)},
        {
            "stop_reason": trace.stop_reason,
            "n_levels": final.ell + 1,
            "final": {
                "n_elements": final.n_elements, "n_dofs": final.n_dofs,
                "eta": final.eta, "cost_dofs": final.cost_dofs,
            },
        },
    )
    print(f"{args.bench}/{alg}: {final.ell + 1} levels, "
          f"{final.n_dofs} DOFs, eta={final.eta:.4e} -> {args.out}")
    return 0


_SWEEP_SAFETY_CUM_DOFS = 2 * 10**6


def _sweep_cell(task) -> tuple[float, float, float]:
    """One (theta, lambda) cell: weighted cumulative runtime at the stop.

    Runs until eta_ell / eta_0 < stop_ratio (default 1e-2) and reports
    eta_final * (total wall time), the hardware-weighted figure of merit,
    as the median over ``repeat`` identical runs.
    """
    bench_name, alg, theta, lam, p, repeat, stop_ratio = task
    bench = get(bench_name)
    lam_key = "lambda_lin" if alg == "ailfem" else "lambda_alg"
    params = dict(bench.defaults)
    params.update({"theta": theta, lam_key: lam, "p": p,
                   "max_levels": 1})
    probe = _run_driver(alg, bench, params)
    eta0 = probe.final_records()[-1].eta
    params.pop("max_levels")
    params.update({"tau": stop_ratio * eta0,
                   "max_cum_dofs": _SWEEP_SAFETY_CUM_DOFS})
    values = []
    eta_final = float("nan")
    for _ in range(max(1, repeat)):
        t0 = time.monotonic()
        trace = _run_driver(alg, bench, params)
        wall = time.monotonic() - t0
        eta_final = trace.final_records()[-1].eta
        values.append(eta_final * wall)
    return theta, lam, float(statistics.median(values))


def _cmd_sweep(args) -> int:
    bench = get(args.bench)
    alg = args.alg or bench.algorithm
    thetas = [float(v) for v in args.thetas.split(",")]
    lambdas = [float(v) for v in args.lambdas.split(",")]
    p = args.p if args.p is not None else bench.defaults.get("p", 1)
    tasks = [(args.bench, alg, th, lam, p, args.repeat, args.stop_ratio)
             for lam in lambdas for th in thetas]
    t0 = time.monotonic()
    workers = min(_threads(), len(tasks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, tasks))
    else:
        results = [_sweep_cell(t) for t in tasks]
    wall = time.monotonic() - t0
    table = {(th, lam): v for th, lam, v in results}
    grid = np.array([[table[(th, lam)] for th in thetas] for lam in lambdas])

    lines = ["lambda\\theta," + ",".join(repr(th) for th in thetas)]
    for i, lam in enumerate(lambdas):
        lines.append(repr(lam) + "," + ",".join(repr(float(v)) for v in grid[i]))
    text = "\n".join(lines) + "\n"
    with open(args.out, "w") as fh:
        fh.write(text)

    row_min = [thetas[int(np.argmin(grid[i]))] for i in range(len(lambdas))]
    col_min = [lambdas[int(np.argmin(grid[:, j]))] for j in range(len(thetas))]
    gi, gj = np.unravel_index(int(np.argmin(grid)), grid.shape)
    for i, lam in enumerate(lambdas):
        print(f"row lambda={lam}: best theta={row_min[i]}")
    for j, th in enumerate(thetas):
        print(f"column theta={th}: best lambda={col_min[j]}")
    print(f"global minimum at theta={thetas[gj]}, lambda={lambdas[gi]}: "
          f"{grid[gi, gj]:.4e}")
    _manifest(
        args.out + ".manifest.json", "sweep",
        dict(bench=args.bench, alg=alg, thetas=thetas, lambdas=lambdas,
             p=p, repeat=args.repeat, stop_ratio=args.stop_ratio),
        {"wall_s": wall},
        {"row_best_theta": row_min, "column_best_lambda": col_min,
         "global_best": {"theta": thetas[gj], "lambda": lambdas[gi],
                         "value": float(grid[gi, gj])}},
    )
    print(f"sweep table -> {args.out}")
    return 0


def _cmd_mesh_info(args) -> int:
    with open(args.path, "rb") as fh:
        head = fh.read(16)
    if head.startswith(b"afemkit-mesh"):
        with open(args.path, "r") as fh:
            mesh = load_text(fh.read())
    else:
        mesh = load_binary(args.path)
    print(f"vertices:         {mesh.n_vertices}")
    print(f"triangles:        {mesh.n_triangles}")
    print(f"boundary edges:   {len(mesh.boundary)}")
    print(f"shape regularity: {shape_regularity(mesh)!r}")
    return 0


def _cmd_rates(args) -> int:
    bench = get(args.bench)
    alg = args.alg or bench.algorithm
    p = args.p if args.p is not None else bench.defaults.get("p", 1)
    params = dict(bench.defaults)
    params["p"] = p
    budget = args.max_cum_dofs or (6 * 10**5 if p >= 2 else 10**5)
    params["max_cum_dofs"] = budget
    trace = _run_driver(alg, bench, params)
    fin = trace.final_records()
    x = np.array([r.cost_dofs for r in fin], dtype=float)
    if alg == "goafem":
        y = np.array([r.extra["goal_err"] for r in fin], dtype=float)
        keep = y > 0
        x, y = x[keep], y[keep]
        label = "corrected goal error"
    else:
        y = np.array([r.eta for r in fin], dtype=float)
        label = "eta"
    slope = rate_fit(x, y, window=0.5)
    expected = bench.expected_rate.get(p)
    if expected is None:
        print(f"{args.bench}/{alg} p={p}: rate {slope:+.3f} ({label}); "
              "no expected value registered")
        return 0
    ok = abs(slope - expected) <= args.tol
    verdict = "PASS" if ok else "FAIL"
    print(f"{verdict} {args.bench}/{alg} p={p}: {label} rate {slope:+.3f} "
          f"expected {expected:+.2f} +/- {args.tol}")
    return 0 if ok else 1


def _cmd_verify(args) -> int:
    rng = np.random.default_rng(0)
    failures = 0

    def report(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        mark = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(f"{mark} {name}" + (f": {detail}" if detail else ""))

    # mesh: conformity + regularity bound on random refinement cascades
    from .bench import crisscross_square, lshape_mesh
    from .mesh import refine

    try:
        worst = 0.0
        for make in (crisscross_square, lshape_mesh):
            mesh = make()
            base = shape_regularity(mesh)
            for _ in range(args.quick and 10 or 30):
                n = mesh.n_triangles
                marked = rng.choice(n, size=max(1, n // 8), replace=False)
                mesh = refine(mesh, [int(m) for m in marked], edges="all")
                worst = max(worst, shape_regularity(mesh) / base)
        report("mesh refinement keeps shape regularity bounded",
               worst <= 2.0 + 1e-12, f"worst ratio {worst:.3f}")
    except AfemError as exc:
        report("mesh refinement keeps shape regularity bounded", False, str(exc))

    # marking: minimal-cardinality oracle on small instances
    from itertools import combinations

    from .estimator import make_indicators
    from .marking import doerfler_min

    ok = True
    for _ in range(50):
        eta2 = rng.random(rng.integers(1, 11)) ** 2
        theta = float(rng.uniform(0.05, 0.95))
        sel = doerfler_min(make_indicators(eta2), theta)
        target = theta * eta2.sum()
        best = next(
            m for m in range(1, eta2.size + 1)
            if any(eta2[list(c)].sum() >= target - 1e-12
                   for c in combinations(range(eta2.size), m))
        )
        if len(sel) != best or eta2[sel].sum() < target - 1e-12:
            ok = False
            break
    report("minimal marking matches exhaustive search", ok)

    # solver: measured contraction on a short adaptive hierarchy
    from .fespace import assemble, build_space
    from .linsolve import Hierarchy, measure_contraction

    try:
        bench = get("kellogg")
        trace = run_afem(bench.problem, bench.make_mesh(), theta=0.5,
                         lambda_alg=0.01, max_levels=8)
        hierarchy = Hierarchy([build_space(m, 1) for m in trace.meshes])
        system = assemble(hierarchy.spaces[-1], bench.problem)
        q = measure_contraction(system, hierarchy, 12)
        report("solver contraction q <= 0.9", q <= 0.9, f"q={q:.3f}")
    except AfemError as exc:
        report("solver contraction q <= 0.9", False, str(exc))

    # orthogonality of the Galerkin error to the coarse space
    from .fespace import energy_product, prolongate
    from .linsolve import direct_solve

    try:
        coarse = hierarchy.spaces[-2]
        fine = hierarchy.spaces[-1]
        uc = prolongate(
            coarse, fine,
            assemble(coarse, bench.problem).full_vector(
                direct_solve(assemble(coarse, bench.problem))
            ),
        )
        uf = system.full_vector(direct_solve(system))
        wc = uc.copy()
        wc[fine.dirichlet_mask] = 0.0
        resid = abs(energy_product(fine, bench.problem, uf - uc, wc))
        scale = max(
            energy_product(fine, bench.problem, uf, uf), 1e-30)
        report("Galerkin orthogonality", resid <= 1e-9 * scale,
               f"relative residual {resid / scale:.2e}")
    except AfemError as exc:
        report("Galerkin orthogonality", False, str(exc))

    print(f"{failures} failure(s)")
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afemkit",
        description="Adaptive finite element benchmark driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--bench", required=True, choices=sorted(REGISTRY))
        sp.add_argument("--alg", choices=ALGORITHMS)
        sp.add_argument("--p", type=int)

    run_p = sub.add_parser("run", help="one benchmark run -> trace CSV")
    common(run_p)
    run_p.add_argument("--theta", type=float)
    run_p.add_argument("--lambda-alg", dest="lambda_alg", type=float)
    run_p.add_argument("--lambda-sym", dest="lambda_sym", type=float)
    run_p.add_argument("--lambda-lin", dest="lambda_lin", type=float)
    run_p.add_argument("--delta", type=float)
    run_p.add_argument("--alpha-min", dest="alpha_min", type=float)
    run_p.add_argument("--j-max", dest="j_max", type=int)
    run_p.add_argument("--rho", type=float)
    run_p.add_argument("--tau", type=float)
    run_p.add_argument("--max-dofs", dest="max_dofs", type=int)
    run_p.add_argument("--max-cum-dofs", dest="max_cum_dofs", type=int)
    run_p.add_argument("--max-levels", dest="max_levels", type=int)
    run_p.add_argument("--no-nested", dest="no_nested", action="store_true")
    run_p.add_argument("--diagnostics", action="store_true")
    run_p.add_argument("--dump-indicators", dest="dump_indicators")
    run_p.add_argument("--repeat", type=int, default=1)
    run_p.add_argument("--out", required=True)
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="theta x lambda grid table")
    common(sweep_p)
    sweep_p.add_argument("--thetas", required=True)
    sweep_p.add_argument("--lambdas", required=True)
    sweep_p.add_argument("--repeat", type=int, default=1)
    sweep_p.add_argument("--stop-ratio", dest="stop_ratio", type=float,
                         default=1e-2)
    sweep_p.add_argument("--out", required=True)
    sweep_p.set_defaults(func=_cmd_sweep)

    mesh_p = sub.add_parser("mesh-info", help="counts and shape regularity")
    mesh_p.add_argument("path")
    mesh_p.set_defaults(func=_cmd_mesh_info)

    rates_p = sub.add_parser("rates", help="fit convergence rate, pass/fail")
    common(rates_p)
    rates_p.add_argument("--max-cum-dofs", dest="max_cum_dofs", type=int)
    rates_p.add_argument("--tol", type=float, default=0.1)
    rates_p.set_defaults(func=_cmd_rates)

    verify_p = sub.add_parser("verify", help="quick property suites")
    verify_p.add_argument("--quick", action="store_true")
    verify_p.set_defaults(func=_cmd_verify)

    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AfemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
