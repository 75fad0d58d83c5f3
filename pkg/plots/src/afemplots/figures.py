"""The three figure types: convergence, iteration counts, sweep table."""

from __future__ import annotations

import os

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .io import (
    SchemaError,
    final_rows,
    read_manifest,
    read_sweep,
    read_trace,
    solver_counts,
)

# deterministic rendering: fixed hash salt, no timestamps, fixed fonts
matplotlib.rcParams.update({
    "svg.hashsalt": "afemplots",
    "font.family": "DejaVu Sans",
    "figure.dpi": 100,
    "savefig.dpi": 100,
})

X_COLUMNS = {"dofs": "n_dofs", "cum_dofs": "cost_dofs", "cum_time": "time_s"}
X_LABELS = {
    "dofs": "degrees of freedom",
    "cum_dofs": "cumulative degrees of freedom",
    "cum_time": "cumulative wall time [s]",
}
Y_CHOICES = ("eta", "quasi_error", "goal_err", "eta_zeta")
Y_LABELS = {
    "eta": "error estimator",
    "quasi_error": "quasi-error",
    "goal_err": "goal error",
    "eta_zeta": "estimator product",
}


def _save(fig, out: str) -> list[str]:
    """Write PNG and SVG next to each other; return the written paths."""
    stem, ext = os.path.splitext(out)
    if ext.lower() in (".png", ".svg"):
        out_png, out_svg = stem + ".png", stem + ".svg"
    else:
        out_png, out_svg = out + ".png", out + ".svg"
    fig.savefig(out_png, metadata={"Software": "afemplots"})
    fig.savefig(out_svg, metadata={"Date": None})
    plt.close(fig)
    return [out_png, out_svg]


def _series_label(path: str) -> str:
    """Legend entry from the manifest parameters (p, theta, lambda)."""
    params = read_manifest(path)
    bits = []
    for key in ("p", "theta", "lambda_alg", "lambda_sym", "lambda_lin"):
        if key in params:
            bits.append(f"{key}={params[key]}")
    if bits:
        return ", ".join(bits)
    return os.path.splitext(os.path.basename(path))[0]


def _y_values(data: dict, y: str, path: str) -> np.ndarray:
    if y == "eta":
        return data["eta"]
    if y == "quasi_error":
        vals = data["alg_err"] + data["eta"]
        if np.all(np.isnan(data["alg_err"])):
            raise SchemaError(
                f"{path}: quasi_error needs the alg_err column filled "
                "(run with diagnostics)"
            )
        return vals
    if y == "goal_err":
        if "goal_err" not in data:
            raise SchemaError(f"{path}: missing column goal_err")
        return data["goal_err"]
    if y == "eta_zeta":
        if "zeta" not in data:
            raise SchemaError(f"{path}: missing column zeta")
        return data["eta"] * data["zeta"]
    raise SchemaError(f"unknown y quantity {y!r}; choose from {Y_CHOICES}")


def _slope_triangle(ax, x, y, slope: float) -> None:
    """Reference-slope triangle anchored under the trailing data."""
    n = max(2, x.size // 3)
    x0, x1 = x[-n], x[-1]
    if x0 <= 0 or x1 <= x0:
        return
    anchor = y[-n] * 0.4
    y1 = anchor * (x1 / x0) ** slope
    ax.plot([x0, x1, x0, x0], [anchor, y1, y1, anchor],
            color="0.4", lw=0.8)
    ax.annotate(f"{slope:g}", (x0 * 0.95, np.sqrt(anchor * y1)),
                ha="right", va="center", fontsize=8, color="0.3")


def _fit_slope(x, y) -> float:
    n = max(3, x.size // 2)
    good = (x[-n:] > 0) & (y[-n:] > 0)
    if good.sum() < 2:
        return -0.5
    s = np.polyfit(np.log(x[-n:][good]), np.log(y[-n:][good]), 1)[0]
    return float(np.round(s * 4.0) / 4.0) or -0.25


def plot_convergence(csv_paths, x: str, y: str, out: str) -> list[str]:
    """Log-log convergence plot of the per-level final iterates."""
    if x not in X_COLUMNS:
        raise SchemaError(f"unknown x quantity {x!r}; choose from "
                          f"{tuple(X_COLUMNS)}")
    if y not in Y_CHOICES:
        raise SchemaError(f"unknown y quantity {y!r}; choose from {Y_CHOICES}")
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    first = None
    for path in csv_paths:
        data = final_rows(read_trace(path))
        xs = data[X_COLUMNS[x]].astype(float)
        ys = _y_values(data, y, path)
        good = np.isfinite(xs) & np.isfinite(ys) & (xs > 0) & (ys > 0)
        ax.loglog(xs[good], ys[good], marker="o", ms=3, lw=1.2,
                  label=_series_label(path))
        if first is None and good.sum() >= 3:
            first = (xs[good], ys[good])
    if first is not None:
        _slope_triangle(ax, first[0], first[1], _fit_slope(*first))
    ax.set_xlabel(X_LABELS[x])
    ax.set_ylabel(Y_LABELS[y])
    ax.grid(True, which="both", lw=0.3, alpha=0.5)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out)


def plot_iterations(csv_paths, out: str) -> list[str]:
    """Per-level algebraic solver step counts, one series per trace."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for path in csv_paths:
        data = read_trace(path)
        levels, counts = solver_counts(data)
        params = read_manifest(path)
        nested = params.get("nested", True)
        label = _series_label(path)
        if "nested" in params:
            label += " (nested)" if nested else " (from zero)"
        ax.step(levels, counts, where="mid", marker="o", ms=3, lw=1.2,
                label=label)
    ax.set_xlabel("adaptive level")
    ax.set_ylabel("algebraic solver steps")
    ax.yaxis.get_major_locator().set_params(integer=True)
    ax.grid(True, lw=0.3, alpha=0.5)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out)


_ROW_COLOR = "#cfe8ff"
_COL_COLOR = "#d4f7d4"
_GLOBAL_COLOR = "#ffd9a8"


def render_sweep_table(csv_path: str, out: str) -> list[str]:
    """Sweep grid with row, column and global minima highlighted.

    Ties are highlighted in every tied cell; the global minimum (again
    with ties) overrides the row/column shading.
    """
    thetas, lambdas, grid = read_sweep(csv_path)
    tol = 1e-12
    row_min = grid.min(axis=1, keepdims=True)
    col_min = grid.min(axis=0, keepdims=True)
    global_min = grid.min()

    fig, ax = plt.subplots(
        figsize=(1.6 + 1.1 * len(thetas), 1.0 + 0.45 * len(lambdas))
    )
    ax.axis("off")
    cell_text = [[f"{v:.3e}" for v in row] for row in grid]
    colors = []
    for i in range(len(lambdas)):
        row = []
        for j in range(len(thetas)):
            v = grid[i, j]
            if v <= global_min * (1 + tol) + tol:
                row.append(_GLOBAL_COLOR)
            elif v <= row_min[i, 0] * (1 + tol) + tol:
                row.append(_ROW_COLOR)
            elif v <= col_min[0, j] * (1 + tol) + tol:
                row.append(_COL_COLOR)
            else:
                row.append("white")
        colors.append(row)
    table = ax.table(
        cellText=cell_text,
        cellColours=colors,
        rowLabels=[f"lambda={v:g}" for v in lambdas],
        colLabels=[f"theta={v:g}" for v in thetas],
        loc="center",
    )
    table.auto_set_font_size(False)
    table.set_fontsize(8)
    ax.set_title("weighted cumulative runtime (lower is better)", fontsize=9)
    fig.tight_layout()
    return _save(fig, out)
