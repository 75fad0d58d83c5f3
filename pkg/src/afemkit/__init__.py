"""Adaptive 2D finite element engine with contractive multilevel solvers.

The package couples newest-vertex-bisection mesh refinement, residual
a-posteriori error estimation, Doerfler marking and a multigrid-
preconditioned CG solver into four adaptive drivers:

* :func:`afemkit.afem.run_afem` — symmetric linear problems,
* :func:`afemkit.goafem.run_goafem` — goal-oriented (quantity of
  interest) adaptivity with a dual problem,
* :func:`afemkit.iterlin.run_aisfem` — non-symmetric problems via the
  damped symmetrization fixed point,
* :func:`afemkit.iterlin.run_ailfem` — strongly monotone quasilinear
  problems via the energy-contractive linearization fixed point.

All drivers record every iterate with cumulative cost counters and
export a flat CSV trace; :mod:`afemkit.bench` registers the reference
benchmark problems and :mod:`afemkit.cli` exposes them on the command
line.
"""

__version__ = "0.1.0"

from .afem import (
    AdaptiveTrace,
    StepRecord,
    check_full_rlinear,
    quasi_error,
    rate_fit,
    run_afem,
)
from .bench import REGISTRY, Benchmark, get
from .errors import (
    AfemError,
    ContractError,
    GeometryError,
    LineageError,
    StructureError,
)
from .estimator import residual_indicators
from .fespace import ProblemSpec, Space, assemble, build_space
from .goafem import run_goafem
from .iterlin import run_ailfem, run_aisfem
from .linsolve import Hierarchy, direct_solve, solver_step, start_state
from .marking import doerfler_binned, doerfler_min
from .mesh import Mesh, initial_mesh, refine, shape_regularity, uniform_refine

__all__ = [
    "AdaptiveTrace",
    "AfemError",
    "Benchmark",
    "ContractError",
    "GeometryError",
    "Hierarchy",
    "LineageError",
    "Mesh",
    "ProblemSpec",
    "REGISTRY",
    "Space",
    "StepRecord",
    "StructureError",
    "assemble",
    "build_space",
    "check_full_rlinear",
    "direct_solve",
    "doerfler_binned",
    "doerfler_min",
    "get",
    "initial_mesh",
    "quasi_error",
    "rate_fit",
    "refine",
    "residual_indicators",
    "run_afem",
    "run_ailfem",
    "run_aisfem",
    "run_goafem",
    "shape_regularity",
    "solver_step",
    "start_state",
    "uniform_refine",
    "__version__",
]
