"""CSV and manifest readers for the documented trace schema."""

from __future__ import annotations

import csv
import json
import os

import numpy as np

REQUIRED_COLUMNS = [
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
]

_INT_COLUMNS = {"ell", "k", "is_final", "n_elements", "n_dofs",
                "cost_elems", "cost_dofs", "ops", "j", "J_max"}


class SchemaError(ValueError):
    """The input file does not match the documented CSV schema."""


def read_trace(path: str) -> dict[str, np.ndarray]:
    """Read a trace CSV into column arrays (NaN for empty cells)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: empty file, expected a trace CSV header")
    header = rows[0]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(
            f"{path}: missing required columns {', '.join(missing)}"
        )
    body = rows[1:]
    if not body:
        raise SchemaError(f"{path}: trace CSV has a header but no data rows")
    data: dict[str, np.ndarray] = {}
    for i, name in enumerate(header):
        cells = [row[i] if i < len(row) else "" for row in body]
        if name in _INT_COLUMNS:
            data[name] = np.array(
                [int(c) if c else 0 for c in cells], dtype=np.int64
            )
        else:
            data[name] = np.array(
                [float(c) if c else np.nan for c in cells], dtype=float
            )
    return data


def read_manifest(csv_path: str) -> dict:
    """Parameters from the run's JSON sidecar, or {} when absent."""
    path = csv_path + ".manifest.json"
    if not os.path.exists(path):
        return {}
    with open(path) as fh:
        return json.load(fh).get("parameters", {})


def read_sweep(path: str) -> tuple[list[float], list[float], np.ndarray]:
    """Read a sweep table: (thetas, lambdas, grid[lambda, theta])."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise SchemaError(f"{path}: empty file, expected a sweep table")
    header = rows[0]
    if not header or "\\" not in header[0]:
        raise SchemaError(
            f"{path}: first cell must name the axes (found {header[:1]!r})"
        )
    try:
        thetas = [float(v) for v in header[1:]]
        lambdas = [float(r[0]) for r in rows[1:]]
        grid = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric sweep cell: {exc}") from None
    if grid.size == 0 or grid.shape != (len(lambdas), len(thetas)):
        raise SchemaError(f"{path}: ragged or empty sweep table")
    return thetas, lambdas, grid


def final_rows(data: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Restrict all columns to the per-level final iterates."""
    keep = data["is_final"] == 1
    return {k: v[keep] for k, v in data.items()}


def solver_counts(data: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """(levels, max solver step per level) from the full trace."""
    levels = np.unique(data["ell"])
    counts = np.array([
        data["k"][data["ell"] == ell].max() for ell in levels
    ])
    return levels, counts
