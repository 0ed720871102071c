import json
import os

import pytest

from hilbench import presets
from hilbench.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, main


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture()
def tiny_cfg(tmp_path):
    return write_json(tmp_path / "cfg.json", {
        "schema_version": 1,
        "run_id": "cli-test",
        "seed": 5,
        "termination": {"duration_s": 2.0},
        "path": {"preset": "square-sandbox"},
        "sut": {"name": "pure-pursuit", "goal_speed_mps": 0.3,
                "latency": {"mode": "constant", "ms": 15.48}},
    })


class TestStageCommands:
    def test_stage1_produces_artifacts_and_manifest(self, tiny_cfg, tmp_path):
        out = tmp_path / "run"
        assert main(["stage1", "--config", tiny_cfg, "--out", str(out), "-q"]) == EXIT_OK
        for name in ("audit.ndjson", "report.json", "trajectory.csv",
                     "latency.csv", "manifest.json"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "stage1"
        assert not manifest["flags"]["aborted"]

    def test_seed_override_beats_config(self, tiny_cfg, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["stage1", "--config", tiny_cfg, "--out", str(out1), "--seed", "99", "-q"])
        main(["stage1", "--config", tiny_cfg, "--out", str(out2), "--seed", "99", "-q"])
        assert (out1 / "audit.ndjson").read_bytes() == (out2 / "audit.ndjson").read_bytes()
        report = json.loads((out1 / "report.json").read_text())
        assert report["seed"] == 99

    def test_stage1_abort_exit_code(self, tmp_path):
        cfg = write_json(tmp_path / "bad.json", {
            "schema_version": 1, "run_id": "x", "seed": 1,
            "termination": {"duration_s": 2.0},
            "path": {"preset": "square-sandbox"},
            "sut": {"name": "pure-pursuit", "goal_speed_mps": 0.3,
                    "latency": {"mode": "constant", "ms": 900.0}},
        })
        assert main(["stage1", "--config", cfg, "--out", str(tmp_path / "r"), "-q"]) == EXIT_ABORT

    def test_stage2_writes_response_curve(self, tiny_cfg, tmp_path):
        sweep = write_json(tmp_path / "sweep.json", {
            "injected_delays_ms": [0, 10],
            "base": json.loads(open(tiny_cfg).read()),
        })
        out = tmp_path / "s2"
        assert main(["stage2", "--config", sweep, "--out", str(out), "-q"]) == EXIT_OK
        lines = (out / "response_curve.csv").read_text().strip().splitlines()
        assert lines[0] == "delay_ms,cte_rmse_m,cte_mean_m,cte_p95_m,distance_m,completed"
        assert len(lines) == 3
        assert (out / "delay_0ms_rep0" / "report.json").exists()
        assert (out / "delay_10ms_rep0" / "audit.ndjson").exists()

    def test_stage3_with_script_flag(self, tiny_cfg, tmp_path):
        scenario = presets.load("stage3-intersection")["scenario"]
        script = write_json(tmp_path / "script.json", scenario)
        out = tmp_path / "s3"
        assert main(["stage3", "--config", tiny_cfg, "--script", script,
                     "--out", str(out), "-q"]) == EXIT_OK
        assert (out / "safety.csv").exists()
        assert (out / "events.json").exists()

    def test_preset_name_accepted_as_config(self, tmp_path):
        assert main(["validate-config", "--config", "stage1-default", "-q"]) == EXIT_OK


class TestReplayCommand:
    def test_replay_matches_original_report(self, tiny_cfg, tmp_path):
        out = tmp_path / "orig"
        main(["stage1", "--config", tiny_cfg, "--out", str(out), "-q"])
        out2 = tmp_path / "replay"
        assert main(["replay-report", "--log", str(out / "audit.ndjson"),
                     "--out", str(out2), "-q"]) == EXIT_OK
        assert (out / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_missing_log_is_config_error(self, tmp_path):
        assert main(["replay-report", "--log", str(tmp_path / "nope.ndjson"),
                     "--out", str(tmp_path / "o"), "-q"]) == EXIT_CONFIG


class TestValidateCommand:
    def test_valid_config_ok(self, tiny_cfg):
        assert main(["validate-config", "--config", tiny_cfg, "-q"]) == EXIT_OK

    def test_invalid_field_reports_path(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "bad.json", {
            "schema_version": 1, "run_id": "x", "seed": 1,
            "termination": {"duration_s": 2.0},
            "path": {"preset": "square-sandbox"},
            "links": {"v2r": {"perturbation": {"loss_probability": 1.7}}},
        })
        assert main(["validate-config", "--config", cfg, "-q"]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "links.v2r.perturbation.loss_probability" in err

    def test_missing_file_is_config_error(self):
        assert main(["validate-config", "--config", "/does/not/exist.json", "-q"]) == EXIT_CONFIG

    def test_unknown_flag_exits_config(self, capsys):
        assert main(["stage1", "--nonsense"]) == EXIT_CONFIG

    def test_sweep_config_validated(self, tiny_cfg, tmp_path):
        sweep = write_json(tmp_path / "sweep.json", {
            "injected_delays_ms": [0, 10],
            "base": json.loads(open(tiny_cfg).read()),
        })
        assert main(["validate-config", "--config", sweep, "-q"]) == EXIT_OK


class TestIdentifyCommand:
    def test_identify_writes_fit(self, tiny_cfg, tmp_path):
        out = tmp_path / "ident"
        assert main(["identify", "--config", tiny_cfg, "--channel", "velocity",
                     "--out", str(out), "-q"]) == EXIT_OK
        fit = json.loads((out / "fopdt_fit.json").read_text())
        assert fit["r2"] > 0.97
        assert (out / "step_log.csv").exists()


class TestCalibrateCommand:
    def test_calibrate_writes_model_and_metrics(self, tmp_path):
        out = tmp_path / "cal"
        assert main(["calibrate", "--out", str(out), "--epochs", "5", "-q"]) == EXIT_OK
        metrics = json.loads((out / "calibration_metrics.json").read_text())
        assert metrics["n_train"] == 2746 and metrics["n_test"] == 687
        assert set(metrics["metrics"]) == {"raw", "rigid_svd", "affine", "hybrid"}
        assert (out / "model.json").exists()
        assert (out / "dataset.csv").exists()


class TestEnvOutDir(object):
    def test_hilbench_out_env(self, tiny_cfg, tmp_path, monkeypatch):
        monkeypatch.setenv("HILBENCH_OUT", str(tmp_path / "envout"))
        assert main(["validate-config", "--config", tiny_cfg, "-q"]) == EXIT_OK
        out = tmp_path / "envout" / "x"
        monkeypatch.setenv("HILBENCH_OUT", str(out))
        assert main(["stage1", "--config", tiny_cfg, "-q"]) == EXIT_OK
        assert (out / "report.json").exists()
