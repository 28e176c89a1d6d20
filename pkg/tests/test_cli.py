import json
import os

import numpy as np
import pytest

from qbm.main import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main
from qbm.models.scenario import json_schema
from qbm.services import export, registry

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _config(name):
    return os.path.join(ROOT, "configs", name)


def _write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
    return str(path)


def _manifest(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        return json.load(fh)


def _diagnostic(err: str) -> dict:
    for line in reversed(err.strip().splitlines()):
        if line.startswith("{"):
            return json.loads(line)
    raise AssertionError(f"no JSON diagnostic in {err!r}")


def test_eq10_run_writes_manifest(tmp_path):
    out = str(tmp_path / "eq10")
    assert main(["run", _config("eq10.json"), "--out", out]) == EXIT_OK
    manifest = _manifest(out)
    assert manifest["scenario"] == "eq10"
    assert manifest["summary"]["entangled_global_purity"] == pytest.approx(1.0)
    assert [f["path"] for f in manifest["files"]] == ["eq10.csv"]
    assert manifest["config_hash"] == export.config_hash(manifest["config"])
    assert "numpy" in manifest["versions"]

    runs = registry.recent_runs()
    assert runs[0]["scenario"] == "eq10"
    assert runs[0]["status"] == "completed"


def test_uncoupled_extraction_is_constant(tmp_path):
    out = str(tmp_path / "extract")
    assert main(["run", _config("extract_uncoupled.json"), "--out", out]) == EXIT_OK
    data = export.read_csv(os.path.join(out, "coefficients.csv"))
    assert np.allclose(data["OmegaBar2"], 1.0, atol=1e-10)
    assert np.allclose(data["gammaBar"], 0.0, atol=1e-10)
    assert np.allclose(data["D"], 0.0, atol=1e-10)
    assert _manifest(out)["summary"]["flagged"] == 0


@pytest.mark.parametrize("payload", [
    {"scenario": "kernel", "spectrum": {"gamma": -0.1}},
    {"scenario": "kernel", "bogus": 1},
    {"scenario": "kernel", "grid": {"q_points": 0}},
    {"scenario": "teleport"},
    '{"scenario": "kernel",',
])
def test_invalid_config_exits_2_without_output(payload, tmp_path, capsys):
    out = tmp_path / "out"
    path = _write_config(tmp_path, payload)
    assert main(["run", path, "--out", str(out)]) == EXIT_INVALID
    assert not out.exists()
    assert "error" in _diagnostic(capsys.readouterr().err)


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "absent.json"), "--out", str(tmp_path / "out")]) == EXIT_INVALID


def test_divergent_tabulated_spectrum_exits_3(tmp_path, capsys):
    (tmp_path / "tail.csv").write_text("omega,g2\n0.0,0.0\n1.0,1.0\n2.0,0.5\n")
    path = _write_config(tmp_path, {
        "scenario": "kernel", "spectrum": {"kind": "tabulated", "table_path": "tail.csv"},
    })
    out = tmp_path / "out"
    assert main(["run", path, "--out", str(out)]) == EXIT_NUMERICAL
    assert not out.exists()
    assert _diagnostic(capsys.readouterr().err)["error"] == "DivergentIntegralError"


def test_classical_zero_temperature_exits_2(tmp_path):
    path = _write_config(tmp_path, {"scenario": "kernel", "physics": {"T": 0.0}})
    assert main(["run", path, "--out", str(tmp_path / "out")]) == EXIT_INVALID


def test_oversized_wigner_grid_is_rejected(tmp_path, capsys):
    path = _write_config(tmp_path, {
        "scenario": "eq10", "grid": {"q_points": 3000, "p_points": 3000},
    })
    assert main(["wigner", path, "--out", str(tmp_path / "out")]) == EXIT_INVALID
    diagnostic = _diagnostic(capsys.readouterr().err)
    assert diagnostic["diagnostics"]["points"] == 9_000_000
    assert registry.recent_runs()[0]["status"] == "failed"


def test_unexpected_error_exits_3(tmp_path, capsys, monkeypatch):
    def boom(ctx):
        raise RuntimeError("solver state lost")

    monkeypatch.setattr("qbm.main.build_handlers", lambda: {"eq10": boom})
    assert main(["run", _config("eq10.json"), "--out", str(tmp_path / "out")]) == EXIT_NUMERICAL
    diagnostic = _diagnostic(capsys.readouterr().err)
    assert diagnostic["error"] == "RuntimeError"
    run = registry.recent_runs()[0]
    assert run["status"] == "failed"
    assert run["exit_code"] == EXIT_NUMERICAL


def test_kernel_runs_are_reproducible(tmp_path):
    path = _write_config(tmp_path, {
        "scenario": "kernel",
        "spectrum": {"gamma": 0.1, "Lambda": 5.0},
        "bath": {"N": 64, "omega_max": 25.0},
        "numerics": {"horizon": 2.0, "samples": 201},
    })
    outputs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["run", path, "--out", out]) == EXIT_OK
        outputs.append(out)
    for name in ("kernel.csv", "bath_grid.csv"):
        with open(os.path.join(outputs[0], name), "rb") as a, open(os.path.join(outputs[1], name), "rb") as b:
            assert a.read() == b.read()
    summary = _manifest(outputs[0])["summary"]
    assert summary["K0"] == pytest.approx(4.0 * 0.1 * 5.0 / np.pi)
    assert summary["kernel_grid_deviation"] < 1e-2
    assert summary["fdr_weight"] == pytest.approx(0.2)


def test_single_point_vacuum_grid(tmp_path):
    path = _write_config(tmp_path, {
        "scenario": "eq10",
        "state": {"kind": "vacuum"},
        "grid": {"q_min": 0, "q_max": 0, "p_min": 0, "p_max": 0, "q_points": 1, "p_points": 1},
    })
    out = str(tmp_path / "wigner")
    assert main(["wigner", path, "--out", out]) == EXIT_OK
    data = export.read_csv(os.path.join(out, "wigner.csv"))
    assert data["f"][0] == pytest.approx(1.0 / np.pi)


def test_cat_grid_has_negative_values(tmp_path):
    out = str(tmp_path / "cat")
    assert main(["wigner", _config("wigner_cat.json"), "--out", out]) == EXIT_OK
    data = export.read_csv(os.path.join(out, "wigner.csv"))
    assert data["f"].size == 281 * 121
    assert data["f"].min() < 0
    assert _manifest(out)["files"][0]["rows"] == 281 * 121


def test_schema_file_matches_models(capsys):
    with open(os.path.join(ROOT, "schema", "scenario.schema.json")) as fh:
        on_disk = json.load(fh)
    generated = json_schema()
    assert set(on_disk["properties"]) == set(generated["properties"])
    assert set(on_disk["$defs"]) == set(generated["$defs"])

    assert main(["schema"]) == EXIT_OK
    assert set(json.loads(capsys.readouterr().out)["properties"]) == set(generated["properties"])


def test_runs_listing(tmp_path, capsys):
    main(["run", _config("eq10.json"), "--out", str(tmp_path / "eq10")])
    capsys.readouterr()
    assert main(["runs", "--limit", "5"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert json.loads(lines[0])["scenario"] == "eq10"


def test_counterpunch_run(tmp_path):
    out = str(tmp_path / "counterpunch")
    assert main(["run", _config("counterpunch.json"), "--out", out]) == EXIT_OK
    summary = _manifest(out)["summary"]
    assert summary["renormalized_mass"] == pytest.approx(1.0)
    assert summary["expected_ratio"] == pytest.approx(0.5)
    assert summary["ratio"] == pytest.approx(0.5, rel=0.05)


def test_small_simulate_run(tmp_path):
    path = _write_config(tmp_path, {
        "scenario": "simulate",
        "spectrum": {"gamma": 0.1, "Lambda": 10.0},
        "bath": {"N": 128, "omega_max": 50.0},
        "numerics": {"horizon": 2.0, "samples": 20, "N_traj": 200, "seed": 3},
        "state": {"kind": "squeezed", "squeeze": 0.3, "mean": [1.0, 0.0]},
    })
    out = str(tmp_path / "simulate")
    assert main(["run", path, "--out", out, "--seed", "11", "--threads", "2"]) == EXIT_OK
    manifest = _manifest(out)
    assert manifest["seeds"] == {"seed": 11, "trajectories": 200}
    assert manifest["threads"] == 2
    assert {f["path"] for f in manifest["files"]} == {"moments.csv", "trajectory.csv"}
    assert 0.0 <= manifest["summary"]["fraction_within_3se"] <= 1.0


def test_cat_initial_state_is_rejected_by_simulate(tmp_path):
    path = _write_config(tmp_path, {
        "scenario": "simulate",
        "bath": {"N": 16},
        "numerics": {"horizon": 0.1, "N_traj": 4},
        "state": {"kind": "cat", "separation": 2.0},
    })
    assert main(["run", path, "--out", str(tmp_path / "out")]) == EXIT_INVALID


@pytest.mark.slow
def test_decoherence_outpaces_relaxation(tmp_path):
    out = str(tmp_path / "decohere")
    assert main(["run", _config("decohere.json"), "--out", out]) == EXIT_OK
    summary = _manifest(out)["summary"]
    assert summary["relaxation_over_half_life"] >= 5.0
    assert summary["monotone_after_transient"]
    assert summary["max_purity"] <= 1.0 + 1e-9
    data = export.read_csv(os.path.join(out, "decoherence.csv"))
    assert data["visibility"][0] == pytest.approx(1.0)


def test_locality_run(tmp_path):
    path = _write_config(tmp_path, {
        "scenario": "locality",
        "spectrum": {"gamma": 0.1, "Lambda": 5.0},
        "bath": {"N": 64, "omega_max": 25.0},
        "numerics": {"horizon": 5.0, "samples": 201},
    })
    out = str(tmp_path / "locality")
    assert main(["run", path, "--out", out]) == EXIT_OK
    summary = _manifest(out)["summary"]
    assert summary["max_deviation"] <= 1e-6
    assert summary["local"] is True
    assert summary["states"] == 3
    data = export.read_csv(os.path.join(out, "locality.csv"))
    assert set(data) == {"t", "d_0", "D_0", "d_1", "D_1", "d_2", "D_2"}
