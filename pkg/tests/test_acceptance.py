"""Acceptance suite: one PASS/FAIL line per primary criterion, at its stated tolerance."""

import contextlib
import json
import tempfile
import time
from pathlib import Path

import jsonschema
import pytest

import test_a2a
import test_graph
import test_knowledge
import test_tools
import test_validation
from agentizer.a2a import card_schema
from agentizer.bench import TaskRecord, TaskResult, compute_ecr, compute_tpr, run_suite
from agentizer.cli import main
from agentizer.tools.sandbox import META_DIR
from agentizer.validation import Matcher, MatcherKind
from support import FIXTURES, audit_finished, dag_plan, run_plan

RESULTS: dict[str, bool] = {}
CRITERIA = [
    "metric-arithmetic",
    "end-to-end-oracle",
    "scheduler-properties",
    "budget-safety",
    "validation-gate",
    "a2a-conformance",
    "sandbox-containment",
    "knowledge-integrity",
]


@contextlib.contextmanager
def criterion(name, capsys):
    try:
        yield
    except BaseException as exc:
        RESULTS[name] = False
        with capsys.disabled():
            print(f"\nFAIL {name}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    RESULTS[name] = True
    with capsys.disabled():
        print(f"\nPASS {name}")


def tasks(executed, passed, total):
    matcher = Matcher(MatcherKind.EXIT_CODE)
    out = [TaskRecord(f"p{i}", "r", "q", matcher, TaskResult.PASSED) for i in range(passed)]
    out += [TaskRecord(f"q{i}", "r", "q", matcher, TaskResult.FAILED_QUALITY) for i in range(executed - passed)]
    out += [TaskRecord(f"x{i}", "r", "q", matcher, TaskResult.FAILED_EXECUTION) for i in range(total - executed)]
    return out


def test_metric_arithmetic(capsys):
    with criterion("metric-arithmetic", capsys):
        assert compute_ecr(tasks(40, 28, 54)) == 74.07
        assert compute_tpr(tasks(40, 28, 54)) == 51.85
        assert compute_ecr(tasks(3, 1, 54)) == 5.56
        assert compute_tpr(tasks(3, 1, 54)) == 1.85


def test_end_to_end_oracle(tmp_path, capsys):
    with criterion("end-to-end-oracle", capsys):
        started = time.monotonic()
        validator = jsonschema.Draft202012Validator(card_schema())
        for name in ("resize-repo", "stylize-repo", "caption-repo"):
            ws = tmp_path / name
            assert main(["agentize", str(FIXTURES / name), "--workspace", str(ws)]) == 0
            validator.validate(json.loads((ws / META_DIR / "agent-card.json").read_text()))
            assert audit_finished(ws)
        report = run_suite(FIXTURES / "bench-suite.json", work_dir=tmp_path / "bench")
        assert (report.ecr, report.tpr, report.total_tokens) == (100.0, 100.0, (0, 0))
        elapsed = time.monotonic() - started
        assert elapsed < 60, f"took {elapsed:.1f}s"


def test_scheduler_properties(capsys):
    with criterion("scheduler-properties", capsys):
        test_graph.test_edge_insertion_keeps_graph_acyclic()
        test_graph.test_realized_order_respects_every_edge()
        test_graph.test_parallel_and_serial_runs_are_identical()
        with tempfile.TemporaryDirectory() as tmp:
            test_graph.test_diamond_fixture_plan_runs_to_a_diamond(Path(tmp))


def test_budget_safety(tmp_path, capsys):
    with criterion("budget-safety", capsys):
        ws = tmp_path / "broken"
        assert main(["agentize", str(FIXTURES / "broken-repo"), "--workspace", str(ws)]) == 1
        events = [json.loads(line) for line in (ws / META_DIR / "run.log").read_text().splitlines()]
        retries = [e for e in events if e["event"] == "retried" and e["detail"].get("scope") == "trajectory"]
        started = [e for e in events if e["event"] == "started"]
        assert len(retries) == 10, len(retries)
        assert len(started) <= 200, len(started)


def test_validation_gate(tmp_path, capsys):
    with criterion("validation-gate", capsys):
        (tmp_path / "present.txt").write_text("x")
        test_validation.test_gate_passes_iff_every_case_passes(tmp_path)
        recorded = []
        for n, failing, retries in [(1, set(), 0), (3, {1}, 1), (2, {0, 1}, 0), (4, set(), 2), (3, {2}, 0)]:
            ws = tmp_path / f"run-{len(recorded)}"
            state = run_plan(ws, dag_plan(n, [(0, n - 1)] if n > 1 else [], failing), max_retries=retries)
            recorded.append((ws, state["finished"]))
        main(["agentize", str(FIXTURES / "hello-repo"), "--workspace", str(tmp_path / "hello")])
        main(["agentize", str(FIXTURES / "broken-repo"), "--workspace", str(tmp_path / "broken"),
              "--max-retries", "1"])
        recorded += [(tmp_path / "hello", True), (tmp_path / "broken", False)]
        for ws, finished in recorded:
            assert audit_finished(ws) == finished, ws


def test_a2a_conformance(live_agents, capsys):
    with criterion("a2a-conformance", capsys):
        test_a2a.test_card_round_trip()
        test_a2a.test_request_round_trip()
        test_a2a.test_response_round_trip()
        test_a2a.test_schema_invalid_requests_never_execute(live_agents)
        test_a2a.test_router_runs_the_two_step_plan_with_binding(live_agents)
        test_a2a.test_router_short_circuits_on_a_middle_failure(live_agents)


def test_sandbox_containment(tmp_path, monkeypatch, capsys):
    with criterion("sandbox-containment", capsys):
        (tmp_path / "fuzz").mkdir()
        test_tools.test_path_fuzz_never_writes_outside_the_workspace(tmp_path / "fuzz", monkeypatch)
        (tmp_path / "timeouts").mkdir()
        test_tools.test_timeouts_fire_within_one_and_a_half_limits(tmp_path / "timeouts", 0.3)


def test_knowledge_integrity(tmp_path, capsys):
    with criterion("knowledge-integrity", capsys):
        for i, name in enumerate(test_knowledge.REPOS):
            test_knowledge.test_fixture_graphs_are_referentially_sound(name)
            for check in (test_knowledge.test_every_capability_has_a_usage_tuple,
                          test_knowledge.test_rebuild_over_an_unchanged_repo_is_isomorphic):
                scratch = tmp_path / f"{check.__name__}-{i}"
                scratch.mkdir()
                check(name, scratch)
        test_knowledge.test_random_repos_keep_integrity_and_coverage()


def test_zz_summary(capsys):
    """Runs last in this module; large-scale benchmark numbers are replaced by the suites above."""
    missing = [c for c in CRITERIA if c not in RESULTS]
    failed = [c for c in CRITERIA if RESULTS.get(c) is False]
    with capsys.disabled():
        print(f"\n{'PASS' if not missing and not failed else 'FAIL'} substitute-suites "
              f"({len(CRITERIA) - len(missing) - len(failed)}/{len(CRITERIA)} criteria passed)")
    if missing:
        pytest.skip(f"criteria not run in this session: {missing}")
    assert not failed, failed
