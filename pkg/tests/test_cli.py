"""Command-line surface: subcommand wiring, artifact layout, and the
exit-code contract (0 stable, 2 unstable, 1 operational error)."""

import json

import numpy as np
import pytest

from ranstab.cli import main


@pytest.fixture(scope="module")
def preset_configs(tmp_path_factory):
    root = tmp_path_factory.mktemp("configs")
    sym = root / "sym.json"
    asym = root / "asym.json"
    assert main(["init-config", "--policy", "symmetric", "--steps", "300", "--out", str(sym)]) == 0
    assert main(["init-config", "--policy", "asymmetric", "--steps", "300", "--out", str(asym)]) == 0
    return {"symmetric": sym, "asymmetric": asym}


@pytest.fixture(scope="module")
def asym_run(preset_configs, tmp_path_factory):
    """One shared asymmetric pipeline run for the artifact-consuming tests."""
    out = tmp_path_factory.mktemp("asym_run")
    code = main([
        "pipeline", "--config", str(preset_configs["asymmetric"]),
        "--seed", "7", "--no-figures", "--out", str(out),
    ])
    return out, code


class TestInitConfig:
    def test_writes_parseable_document(self, preset_configs):
        doc = json.loads(preset_configs["symmetric"].read_text())
        assert set(doc) == {"scenario", "identification", "stability"}
        assert doc["scenario"]["topology"]["n"] == 12
        assert doc["identification"]["window"] == [0, 150]

    def test_asymmetric_beta_differs_on_triangle(self, preset_configs):
        doc = json.loads(preset_configs["asymmetric"].read_text())
        beta = np.array(doc["scenario"]["policy"]["beta"])
        assert beta[0, 1] != beta[1, 0]


class TestExitCodeContract:
    def test_symmetric_arm_stable(self, preset_configs, tmp_path):
        code = main([
            "pipeline", "--config", str(preset_configs["symmetric"]),
            "--seed", "7", "--no-figures", "--out", str(tmp_path),
        ])
        assert code == 0
        report = json.loads((tmp_path / "stability_report.json").read_text())
        assert report["verdict"] == "stable"
        assert report["ping_pong_events"] == 0

    def test_asymmetric_arm_unstable(self, asym_run):
        out, code = asym_run
        assert code == 2
        report = json.loads((out / "stability_report.json").read_text())
        assert report["verdict"] == "unstable"
        assert report["ping_pong_events"] >= 1

    def test_stabilized_arm_recovers(self, preset_configs, tmp_path):
        code = main([
            "pipeline", "--config", str(preset_configs["asymmetric"]),
            "--seed", "7", "--stabilize", "--no-figures", "--out", str(tmp_path),
        ])
        assert code == 0
        report = json.loads((tmp_path / "stability_report.json").read_text())
        assert report["verdict"] == "unstable"
        cured = report["stabilized_phase"]
        assert cured["verdict"] == "stable"
        assert cured["ping_pong_events"] == 0
        assert (tmp_path / "telemetry_stabilized.csv").exists()

    def test_operational_error_is_one(self, tmp_path):
        assert main(["pipeline", "--config", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "o")]) == 1


class TestPipelineArtifacts:
    def test_manifest_lists_all_artifacts(self, asym_run):
        out, _ = asym_run
        manifest = json.loads((out / "MANIFEST.json").read_text())
        assert manifest["stages_completed"] == ["simulate", "identify", "check", "report"]
        for entry in manifest["artifacts"].values():
            assert (out / entry["path"]).exists()
            assert len(entry["sha256"]) == 64

    def test_plot_data_emitted(self, asym_run):
        out, _ = asym_run
        plots = out / "plots"
        for name in ("load_traces.csv", "demand_allocated.csv",
                     "derivative_scatter.csv", "gershgorin_discs.csv"):
            assert (plots / name).exists()
        header = (plots / "load_traces.csv").read_text().splitlines()[0]
        assert header.count("load_ru") == 12

    def test_figures_rendered_when_enabled(self, preset_configs, tmp_path):
        code = main([
            "pipeline", "--config", str(preset_configs["symmetric"]),
            "--seed", "7", "--out", str(tmp_path),
        ])
        assert code == 0
        pngs = sorted(p.name for p in (tmp_path / "plots").glob("*.png"))
        assert "load_traces.png" in pngs
        assert "gershgorin_discs.png" in pngs


class TestSingleStageCommands:
    def test_simulate_identify_check_stabilize_chain(self, preset_configs, tmp_path):
        sim_dir = tmp_path / "sim"
        sim_dir.mkdir()
        assert main(["simulate", "--config", str(preset_configs["asymmetric"]),
                     "--seed", "7", "--out", str(sim_dir)]) == 0
        assert (sim_dir / "telemetry.csv").exists()
        assert (sim_dir / "handovers.csv").exists()

        doc = json.loads(preset_configs["asymmetric"].read_text())
        topo_path = tmp_path / "topology.json"
        topo_path.write_text(json.dumps(doc["scenario"]["topology"]))

        model_path = tmp_path / "model.json"
        assert main(["identify", "--telemetry", str(sim_dir / "telemetry.csv"),
                     "--topology", str(topo_path), "--out", str(model_path),
                     "--gamma", "0.005", "--degree-coupling", "1",
                     "--scheme", "central", "--window", "0", "150"]) == 0

        report_path = tmp_path / "report.json"
        assert main(["check", "--model", str(model_path), "--out", str(report_path)]) == 2
        report = json.loads(report_path.read_text())
        assert report["verdict"] == "unstable"

        stab_path = tmp_path / "stabilized.json"
        assert main(["stabilize", "--model", str(model_path), "--out", str(stab_path),
                     "--epsilon", "0.05"]) == 0
        stab = json.loads(stab_path.read_text())
        P = np.array(stab["P_stabilized"])
        assert np.array_equal(P, P.T)
        topo_adj = np.zeros((12, 12))
        for i, j in doc["scenario"]["topology"]["edges"]:
            topo_adj[i, j] = topo_adj[j, i] = 1.0
        assert np.all(P[topo_adj > 0] <= -0.05)

    def test_report_command(self, asym_run, tmp_path):
        out, _ = asym_run
        report_dir = tmp_path / "rep"
        assert main(["report", "--telemetry", str(out / "telemetry.csv"),
                     "--model", str(out / "model.json"),
                     "--stability-report", str(out / "stability_report.json"),
                     "--no-figures", "--out", str(report_dir)]) == 0
        assert (report_dir / "derivative_scatter.csv").exists()

    def test_bad_telemetry_is_operational_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,telemetry,file\n")
        assert main(["identify", "--telemetry", str(bad),
                     "--topology", str(bad), "--out", str(tmp_path / "m.json")]) == 1
