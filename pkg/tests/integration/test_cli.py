"""
End-to-end tests of the latticemc command line
"""
import json
import os

import pytest

from latticemc.cli import GEOMETRY_COLUMNS, SWEEP_COLUMNS, Experiment, execute, main, parse_config

TINY = ["--atoms", "12", "--tmax", "3", "thermalization_time=0.5", "batch_size=4", "strict_diffusion=false"]


def _read(path):
    with open(path, encoding="utf-8") as f:
        return f.read()


def _manifest(directory):
    return json.loads(_read(os.path.join(directory, "manifest.json")))


@pytest.mark.integration
@pytest.mark.cli
def test_geometry_command(tmp_path):
    out = str(tmp_path / "geometry")
    assert main(["geometry", "--out", out, "delta0=-200"]) == 0
    lines = _read(os.path.join(out, "geometry.csv")).splitlines()
    manifest = _manifest(out)
    assert lines[0] == f"# manifest_sha256={manifest['manifest_sha256']}"
    assert lines[1] == ",".join(GEOMETRY_COLUMNS)
    values = dict(zip(GEOMETRY_COLUMNS, lines[2].split(",")))
    assert float(values["omega_x"]) == pytest.approx(28.2843, rel=1e-4)
    assert float(values["sr_prediction"]) == pytest.approx(13.505, rel=1e-3)
    assert values["regime"] == "oscillating"
    assert manifest["status"] == "success"
    assert manifest["settings"]["delta0"] == -200.0


@pytest.mark.integration
@pytest.mark.cli
def test_single_run_is_byte_identical(tmp_path):
    """Same configuration and seed give identical tables, whatever the worker count"""
    first, second = str(tmp_path / "first"), str(tmp_path / "second")
    assert main(["single", "--out", first, "--threads", "1", "--seed", "3"] + TINY) == 0
    assert main(["single", "--out", second, "--threads", "2", "--seed", "3"] + TINY) == 0
    table = _read(os.path.join(first, "results.csv"))
    assert table == _read(os.path.join(second, "results.csv"))

    lines = table.splitlines()
    assert lines[1] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 3
    row = dict(zip(SWEEP_COLUMNS, lines[2].split(",")))
    assert float(row["D_x"]) >= 0.0
    assert float(row["E_K"]) > 0.0
    assert row["xi"] == "nan"
    assert 0.0 <= float(row["A"])


@pytest.mark.integration
@pytest.mark.cli
def test_replay_from_manifest(tmp_path):
    first, replay = str(tmp_path / "first"), str(tmp_path / "replay")
    assert main(["single", "--out", first] + TINY) == 0
    assert main(["--config", os.path.join(first, "manifest.json"), "--out", replay]) == 0
    assert _read(os.path.join(first, "results.csv")) == _read(os.path.join(replay, "results.csv"))
    assert _manifest(first)["manifest_sha256"] == _manifest(replay)["manifest_sha256"]


@pytest.mark.integration
@pytest.mark.cli
def test_failed_sweep_is_marked_incomplete(tmp_path):
    """Two grid points cannot bracket a peak: exit 4 with the partial table flagged"""
    out = str(tmp_path / "sweep")
    status = main(["sweep-gamma", "--out", out, "gamma0_grid=5,7", "reference_ratio=2"] + TINY)
    assert status == 4
    lines = _read(os.path.join(out, "results.csv")).splitlines()
    assert lines[1] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 5
    assert lines[-1] == "# incomplete"
    manifest = _manifest(out)
    assert manifest["status"] == "error"
    assert len(manifest["points"]) == 4


@pytest.mark.integration
@pytest.mark.cli
@pytest.mark.parametrize("argv", [
    ["sweep-gamma"],
    ["single", "wavelength=780"],
    ["single", "theta_deg=95"],
    ["single", "delta0=5"],
])
def test_config_errors_exit_with_two(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "bad")]) == 2


@pytest.mark.integration
@pytest.mark.cli
def test_dry_run_writes_manifest_only(tmp_path):
    out = str(tmp_path / "dry")
    assert main(["sweep-gamma", "--dry-run", "--out", out, "gamma0_grid=4,6,8"]) == 0
    assert sorted(os.listdir(out)) == ["manifest.json"]
    manifest = _manifest(out)
    assert manifest["status"] == "dry-run"
    assert manifest["settings"]["gamma0_grid"] == [4.0, 6.0, 8.0]


@pytest.mark.integration
@pytest.mark.cli
def test_execute_with_archive(tmp_path):
    spec = parse_config("command=single\nn_atoms=10\nmeasurement_time=1\nthermalization_time=0.5\n"
                        f"strict_diffusion=false\narchive=true\nout={tmp_path / 'archived'}")
    assert execute(spec, threads=1) == 0
    files = sorted(os.listdir(spec.out))
    assert files == ["manifest.json", "results.csv", "trajectories_000.csv"]
    assert _manifest(spec.out)["points"][0]["archive"] == "trajectories_000.csv"


@pytest.mark.integration
@pytest.mark.cli
def test_spectrum_too_short_for_a_fit(tmp_path, mocker):
    """Each delta goes through spectrum_point; four points cannot be fitted and the run exits 4"""
    from latticemc import cli

    spy = mocker.spy(cli, "spectrum_point")
    out = str(tmp_path / "spectrum")
    argv = ["spectrum", "--out", out, "delta_ratio_grid=0.5,1,1.5,2", "n_bins=16"] + TINY
    assert main(argv) == 4

    assert spy.call_count == 4
    assert all(call.kwargs["n_bins"] == 16 for call in spy.call_args_list)
    lines = _read(os.path.join(out, "spectra.csv")).splitlines()
    assert lines[1] == "gamma0,delta,signal,signal_err"
    assert len(lines) == 7
    assert lines[-1] == "# incomplete"
    manifest = _manifest(out)
    assert manifest["status"] == "error"
    assert len(manifest["points"]) == 4


@pytest.mark.integration
@pytest.mark.cli
def test_threads_capped_by_environment(monkeypatch):
    monkeypatch.setenv("LATTICEMC_THREADS", "2")
    spec = parse_config("command=geometry")
    assert Experiment(spec, 16).threads == 2
    assert Experiment(spec, 1).threads == 1
    assert Experiment(spec).threads == 2
