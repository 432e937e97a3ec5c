import json
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentizer.bench import TaskRecord, TaskResult, compute_ecr, compute_tpr, load_suite, run_suite
from agentizer.errors import MalformedSuite, PreconditionError
from agentizer.validation import Matcher, MatcherKind
from support import FIXTURES

MATCHER = Matcher(MatcherKind.EXIT_CODE)


def records(executed_only: int, passed: int, failed_quality: int, failed_exec: int) -> list[TaskRecord]:
    out = []
    for result, count in ((TaskResult.EXECUTED, executed_only), (TaskResult.PASSED, passed),
                          (TaskResult.FAILED_QUALITY, failed_quality), (TaskResult.FAILED_EXECUTION, failed_exec)):
        out += [TaskRecord(f"t{len(out) + i}", "r", "q", MATCHER, result) for i in range(count)]
    return out


def oracle(count: int, total: int) -> float:
    exact = Fraction(100 * count, total)
    quotient = Decimal(exact.numerator) / Decimal(exact.denominator)
    return float(quotient.quantize(Decimal("0.01"), ROUND_HALF_UP))


@pytest.mark.parametrize("executed,passed,total,ecr,tpr", [
    (40, 28, 54, 74.07, 51.85),
    (3, 1, 54, 5.56, 1.85),
])
def test_reported_rates_are_reproduced(executed, passed, total, ecr, tpr):
    tasks = records(0, passed, executed - passed, total - executed)
    assert compute_ecr(tasks) == ecr
    assert compute_tpr(tasks) == tpr


@given(st.integers(0, 60), st.integers(0, 60), st.integers(0, 60), st.integers(0, 60))
def test_rates_match_a_decimal_oracle_and_ecr_bounds_tpr(a, b, c, d):
    tasks = records(a, b, c, d)
    if not tasks:
        with pytest.raises(MalformedSuite):
            compute_ecr(tasks)
        return
    ecr, tpr = compute_ecr(tasks), compute_tpr(tasks)
    assert ecr == oracle(a + b + c, len(tasks))
    assert tpr == oracle(b, len(tasks))
    assert 0 <= tpr <= ecr <= 100


def test_unrun_tasks_are_rejected():
    with pytest.raises(PreconditionError):
        compute_tpr([TaskRecord("t", "r", "q", MATCHER)])


# -- suites ------------------------------------------------------------------------

def write_suite(tmp_path, mutate=None):
    data = json.loads((FIXTURES / "bench-suite.json").read_text())
    for task in data["tasks"]:
        task["repo"] = str(FIXTURES / task["repo"])
    if mutate:
        mutate(data)
    path = tmp_path / "suite.json"
    path.write_text(json.dumps(data))
    return path


@pytest.mark.parametrize("payload", ["{}", '{"tasks": []}', "not json", '{"tasks": [{"id": "x"}]}'])
def test_malformed_suites(tmp_path, payload):
    path = tmp_path / "suite.json"
    path.write_text(payload)
    with pytest.raises(MalformedSuite):
        load_suite(path)


def test_duplicate_ids_and_escaping_outputs_are_malformed(tmp_path):
    def dup(data):
        data["tasks"].append(dict(data["tasks"][0]))

    with pytest.raises(MalformedSuite):
        load_suite(write_suite(tmp_path, dup))

    def escape(data):
        data["tasks"][0]["output"] = "../x.txt"

    with pytest.raises(MalformedSuite):
        load_suite(write_suite(tmp_path, escape))


def test_fixture_suite_scores_full_marks_without_tokens(tmp_path):
    report = run_suite(FIXTURES / "bench-suite.json", work_dir=tmp_path / "work")
    assert [t.result for t in report.tasks] == [TaskResult.PASSED] * 4
    assert (report.ecr, report.tpr, report.total_tokens) == (100.0, 100.0, (0, 0))
    assert (tmp_path / "work" / "outputs" / "caption-sample.txt").read_text() == "a dark 4x4 image (mean 120.9)\n"
    assert "ECR 100.00%  TPR 100.00%" in report.table()
    written = json.loads(report.write(tmp_path / "r.json").read_text())
    assert written["ecr"] == 100.0 and len(written["tasks"]) == 4


def test_wrong_matcher_drops_quality_but_not_execution(tmp_path):
    def wrong(data):
        data["tasks"][0]["matcher"] = {"kind": "exact-text", "text": "Goodbye, Ada!"}

    report = run_suite(write_suite(tmp_path, wrong), work_dir=tmp_path / "work")
    assert report.tasks[0].result is TaskResult.FAILED_QUALITY
    assert (report.ecr, report.tpr) == (100.0, 75.0)


def test_unagentizable_repo_fails_execution(tmp_path):
    def missing(data):
        data["tasks"][0]["repo"] = str(tmp_path / "nowhere")

    report = run_suite(write_suite(tmp_path, missing), work_dir=tmp_path / "work")
    assert report.tasks[0].result is TaskResult.FAILED_EXECUTION
    assert (report.ecr, report.tpr) == (75.0, 75.0)


def test_parallel_bench_needs_the_scripted_planner(tmp_path):
    with pytest.raises(PreconditionError):
        run_suite(FIXTURES / "bench-suite.json", planner="llm", parallel=2, work_dir=tmp_path)
