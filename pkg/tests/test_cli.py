"""Command-line interface: subcommands, outputs, manifests and exit codes."""

import json

import numpy as np
import pytest

from afemkit.cli import run_cli
from afemkit.mesh import save_binary, save_text, uniform_refine
from afemkit.bench import crisscross_square


def run(capsys, *argv):
    code = run_cli(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


TIMING_COLS = {"time_s", "ops"}


def stable_rows(csv_text):
    """Trace CSV rows with the wall-clock column removed."""
    lines = csv_text.strip().split("\n")
    header = lines[0].split(",")
    drop = [i for i, h in enumerate(header) if h == "time_s"]
    out = []
    for line in lines:
        cells = [c for i, c in enumerate(line.split(",")) if i not in drop]
        out.append(",".join(cells))
    return out


def test_run_writes_trace_and_manifest(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    code, stdout, _ = run(
        capsys, "run", "--bench", "kellogg", "--max-levels", "5",
        "--out", str(out),
    )
    assert code == 0
    assert "kellogg/afem" in stdout
    text = out.read_text()
    header = text.split("\n", 1)[0].split(",")
    assert header[:3] == ["ell", "k", "is_final"]
    assert "eta" in header and "cost_dofs" in header and "ops" in header
    manifest = json.loads((tmp_path / "trace.csv.manifest.json").read_text())
    assert manifest["command"] == "run"
    assert manifest["parameters"]["bench"] == "kellogg"
    assert manifest["parameters"]["max_levels"] == 5
    assert manifest["stop_reason"] == "max_levels"
    for key in ("python", "numpy", "scipy", "afemkit"):
        assert key in manifest["versions"]
    assert manifest["timings"]["median_s"] > 0.0


def test_run_is_deterministic_modulo_timing(tmp_path, capsys):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        code, _, _ = run(
            capsys, "run", "--bench", "kellogg", "--max-levels", "5",
            "--out", str(out),
        )
        assert code == 0
        outs.append(stable_rows(out.read_text()))
    assert outs[0] == outs[1]


def test_run_repeat_records_all_walls(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    code, _, _ = run(
        capsys, "run", "--bench", "kellogg", "--max-levels", "3",
        "--repeat", "3", "--out", str(out),
    )
    assert code == 0
    manifest = json.loads((tmp_path / "trace.csv.manifest.json").read_text())
    walls = manifest["timings"]["wall_s"]
    assert len(walls) == 3
    import statistics

    assert manifest["timings"]["median_s"] == statistics.median(walls)


def test_run_dump_indicators(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    dump = tmp_path / "ind.csv"
    code, _, _ = run(
        capsys, "run", "--bench", "kellogg", "--max-levels", "4",
        "--out", str(out), "--dump-indicators", str(dump),
    )
    assert code == 0
    lines = dump.read_text().strip().split("\n")
    assert lines[0] == "element,eta2"
    vals = np.array([float(l.split(",")[1]) for l in lines[1:]])
    assert np.all(vals >= 0.0) and vals.sum() > 0.0


def test_run_parameter_overrides_reach_the_driver(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    code, _, _ = run(
        capsys, "run", "--bench", "lshape_nonlinear", "--max-levels", "3",
        "--theta", "0.4", "--rho", "0.25", "--out", str(out),
    )
    assert code == 0
    manifest = json.loads((tmp_path / "trace.csv.manifest.json").read_text())
    assert manifest["parameters"]["alg"] == "ailfem"
    assert manifest["parameters"]["theta"] == 0.4
    assert manifest["parameters"]["rho"] == 0.25


def test_unknown_bench_exits_with_argparse_error(tmp_path, capsys):
    code = run_cli(["run", "--bench", "missing", "--out", str(tmp_path / "x")])
    capsys.readouterr()
    assert code != 0


def test_unwritable_output_is_reported(capsys):
    code, _, err = run(
        capsys, "run", "--bench", "kellogg", "--max-levels", "2",
        "--out", "/nonexistent-dir/trace.csv",
    )
    assert code == 2
    assert "error" in err


def test_mesh_info_text_and_binary(tmp_path, capsys):
    mesh = uniform_refine(crisscross_square(n=2), 1)
    tpath = tmp_path / "mesh.txt"
    tpath.write_text(save_text(mesh))
    bpath = tmp_path / "mesh.npz"
    save_binary(mesh, bpath)
    for path in (tpath, bpath):
        code, stdout, _ = run(capsys, "mesh-info", str(path))
        assert code == 0
        assert f"triangles:        {mesh.n_triangles}" in stdout
        assert f"vertices:         {mesh.n_vertices}" in stdout
        assert "shape regularity: " in stdout


def test_mesh_info_missing_file(capsys):
    code, _, err = run(capsys, "mesh-info", "/no/such/file")
    assert code == 2
    assert "error" in err


def test_rates_pass_line(capsys):
    code, stdout, _ = run(
        capsys, "rates", "--bench", "kellogg", "--max-cum-dofs", "100000",
    )
    assert code == 0
    assert stdout.startswith("PASS kellogg/afem p=1")
    assert "expected -0.50" in stdout


def test_rates_fail_sets_exit_code(capsys):
    # an impossible tolerance must flip the verdict and the exit status
    code, stdout, _ = run(
        capsys, "rates", "--bench", "kellogg", "--max-cum-dofs", "20000",
        "--tol", "0.0001",
    )
    assert code == 1
    assert stdout.startswith("FAIL")


def test_verify_quick_suite(capsys):
    code, stdout, _ = run(capsys, "verify", "--quick")
    assert code == 0
    lines = [l for l in stdout.strip().split("\n") if l]
    assert lines[-1] == "0 failure(s)"
    assert sum(l.startswith("PASS") for l in lines) == 4
    assert not any(l.startswith("FAIL") for l in lines)


def test_sweep_small_grid(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("AFEMKIT_THREADS", "2")
    out = tmp_path / "sweep.csv"
    code, stdout, _ = run(
        capsys, "sweep", "--bench", "kellogg", "--thetas", "0.3,0.6",
        "--lambdas", "0.1", "--stop-ratio", "0.5", "--out", str(out),
    )
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "lambda\\theta,0.3,0.6"
    cells = lines[1].split(",")
    assert cells[0] == "0.1"
    assert all(float(c) > 0.0 for c in cells[1:])
    assert "global minimum at theta=" in stdout
    manifest = json.loads((tmp_path / "sweep.csv.manifest.json").read_text())
    assert manifest["parameters"]["stop_ratio"] == 0.5
    assert manifest["global_best"]["theta"] in (0.3, 0.6)


def test_threads_env_var(monkeypatch):
    from afemkit.cli import _threads

    monkeypatch.setenv("AFEMKIT_THREADS", "3")
    assert _threads() == 3
    monkeypatch.setenv("AFEMKIT_THREADS", "not-a-number")
    assert _threads() >= 1
    monkeypatch.delenv("AFEMKIT_THREADS")
    assert _threads() >= 1
