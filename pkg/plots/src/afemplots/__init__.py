"""Figure rendering for adaptive finite element trace CSVs.

This package only reads the documented CSV outputs of the solver
package (trace files, sweep tables and their JSON manifests) and turns
them into log-log convergence plots, per-level iteration-count plots
and highlighted parameter-sweep tables.  It never recomputes any
quantity itself, and renders byte-identical images for identical
inputs.
"""

from .figures import plot_convergence, plot_iterations, render_sweep_table
from .io import SchemaError, read_manifest, read_sweep, read_trace

__version__ = "0.1.0"

__all__ = [
    "SchemaError",
    "plot_convergence",
    "plot_iterations",
    "read_manifest",
    "read_sweep",
    "read_trace",
    "render_sweep_table",
]
