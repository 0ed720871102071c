"""Regression pins against the stored golden fixture.

The fixture was produced by a 1 s run of the shipped square-sandbox config
(seed 20240808).  Replaying its audit log must reproduce the stored report
byte for byte, and re-running the same config must reproduce the stored log
byte for byte.  A failure here means behavior changed in a way that breaks
reproducibility of previously recorded experiments.
"""

import json
from pathlib import Path

from hilbench.config import resolve_run_config
from hilbench.orchestrator import replay_report, report_to_json, run_stage1

DATA = Path(__file__).parent / "data" / "golden_stage1"

GOLDEN_CONFIG = {
    "schema_version": 1,
    "run_id": "golden-stage1",
    "seed": 20240808,
    "termination": {"duration_s": 1.0},
    "path": {"preset": "square-sandbox"},
    "sut": {"name": "pure-pursuit", "goal_speed_mps": 0.3,
            "latency": {"mode": "constant", "ms": 15.48}},
}


def test_replay_of_stored_log_matches_stored_report():
    replayed = replay_report(DATA / "audit.ndjson")
    assert report_to_json(replayed) == (DATA / "report.json").read_text()


def test_rerun_reproduces_stored_log_bytes(tmp_path):
    _, runner = run_stage1(resolve_run_config(GOLDEN_CONFIG))
    out = tmp_path / "audit.ndjson"
    runner.ctx.audit.write_ndjson(out)
    assert out.read_bytes() == (DATA / "audit.ndjson").read_bytes()


def test_stored_report_sanity():
    report = json.loads((DATA / "report.json").read_text())
    assert report["completed"]
    assert report["cycles"]["gts_samples"] == 50
    assert report["completeness"]["fraction"] == 1.0
