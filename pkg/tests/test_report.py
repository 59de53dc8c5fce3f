import json

from anoncloud.report import ALL_CHECKS, build_report
from anoncloud.scenario import run_scenario

from conftest import make_config

EXPECTED_CHECKS = [
    "token_single_use",
    "metadata_only_retention",
    "observer_blindness",
    "true_id_confinement",
    "circuit_validity",
    "epoch_monotonicity",
    "teardown_finality",
    "agent_finality",
    "billing_correctness",
    "state_machine_discipline",
    "result_correctness",
    "quiescence",
]


def test_every_invariant_has_a_check(canonical_run):
    _, report = canonical_run
    assert [inv.name for inv in report.invariants] == EXPECTED_CHECKS
    assert len(ALL_CHECKS) == len(EXPECTED_CHECKS)


def test_summary_lines_format(canonical_run):
    _, report = canonical_run
    lines = report.summary_lines()
    assert lines[0].startswith("scenario ")
    assert lines[-1] == "overall PASS"
    marks = [ln.split()[0] for ln in lines[1:-1]]
    assert set(marks) == {"PASS"}
    named = [ln for ln in lines if ln.startswith("PASS linkage[")]
    assert len(named) == 6  # 3 models x 2 customers


def test_report_json_shape(canonical_run):
    _, report = canonical_run
    data = json.loads(report.to_json())
    assert data["passed"] is True
    assert set(data["counts"]) == {
        "envelopes", "dead_letters", "sessions", "tokens",
    }
    assert data["counts"]["sessions"] == 3
    assert data["counts"]["tokens"] == 3
    assert data["counts"]["dead_letters"] == 0
    assert len(data["invariants"]) == len(EXPECTED_CHECKS)
    assert all(inv["passed"] for inv in data["invariants"])


def test_fault_run_fails_exactly_token_single_use():
    config = make_config(
        customers=["alpha"],
        faults=["accept_replayed_tokens"],
        events=[
            {"kind": "request", "customer": "alpha", "service": 1,
             "job": "sum[2,4,6,8]"},
            {"kind": "replay_last_auth"},
        ],
    )
    _, report = run_scenario(config)
    failing = [inv.name for inv in report.invariants if not inv.passed]
    assert failing == ["token_single_use"]
    assert not report.passed


def test_guarded_replay_is_rejected_cleanly():
    config = make_config(
        customers=["alpha"],
        events=[
            {"kind": "request", "customer": "alpha", "service": 1,
             "job": "sum[2,4,6,8]"},
            {"kind": "replay_last_auth"},
        ],
    )
    transcript, report = run_scenario(config)
    assert report.passed
    errors = transcript.stores["audit"]["manager"]["errors"]
    assert any(e["code"] == "TokenReplay" for e in errors)


def test_build_report_models_override(canonical_run):
    transcript, _ = canonical_run
    report = build_report(transcript, models=("observer",))
    assert {v.model for v in report.linkage} == {"observer"}
    assert report.passed
