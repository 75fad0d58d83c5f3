"""Reproduce the headline convergence rates of all four adaptive drivers.

Runs each benchmark to a moderate cumulative-DOF budget, fits the
trailing-window rate of the error quantity against cumulative DOFs and
prints one line per driver. Takes a few seconds.
"""

import numpy as np

from afemkit import get, rate_fit, run_afem
from afemkit.goafem import run_goafem
from afemkit.iterlin import run_ailfem, run_aisfem


def final_xy(trace, key=None):
    fin = trace.final_records()
    x = np.array([r.cost_dofs for r in fin], dtype=float)
    if key is None:
        y = np.array([r.eta for r in fin], dtype=float)
    else:
        y = np.array([r.extra[key] for r in fin], dtype=float)
    keep = y > 0
    return x[keep], y[keep]


def main() -> None:
    k = get("kellogg")
    tr = run_afem(k.problem, k.make_mesh(), theta=0.5, lambda_alg=0.01,
                  max_cum_dofs=10**5)
    print(f"symmetric driver, checkerboard p=1: "
          f"rate {rate_fit(*final_xy(tr)):+.3f} (expect about -0.5)")

    g = get("zshape_goal")
    tg = run_goafem(g.problem, g.make_mesh(), theta=0.3, lambda_alg=0.7,
                    max_cum_dofs=10**5, reference_goal=g.reference_goal)
    print(f"goal-oriented driver, Z-shape: "
          f"rate {rate_fit(*final_xy(tg, 'goal_err')):+.3f} (expect about -1)")

    c = get("lshape_convection")
    ts = run_aisfem(c.problem, c.make_mesh(), delta=0.1, theta=0.3,
                    lambda_sym=0.1, lambda_alg=0.1, max_cum_dofs=10**5)
    print(f"symmetrized driver, L-shape convection: "
          f"rate {rate_fit(*final_xy(ts)):+.3f} (expect about -0.5)")

    n = get("lshape_nonlinear")
    tn = run_ailfem(n.problem, n.make_mesh(), max_cum_dofs=10**5)
    print(f"linearized driver, L-shape quasilinear: "
          f"rate {rate_fit(*final_xy(tn)):+.3f} (expect about -0.5)")


if __name__ == "__main__":
    main()
