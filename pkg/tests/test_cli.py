import json
import subprocess
import sys

import pytest

from agentizer.cli import main
from agentizer.tools.sandbox import META_DIR
from support import FIXTURES, audit_finished, copy_fixture


def run_log(workspace):
    return [json.loads(line) for line in (workspace / META_DIR / "run.log").read_text().splitlines()]


def test_agentize_hello_repo_then_rerun_is_idempotent(tmp_path, capsys):
    ws = tmp_path / "ws"
    assert main(["agentize", str(FIXTURES / "hello-repo"), "--workspace", str(ws),
                 "--report", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["status"] == "finished" and report["card"]["skills"][0]["id"] == "greet"
    assert audit_finished(ws)
    card = (ws / META_DIR / "agent-card.json").read_bytes()
    env = (ws / META_DIR / "env.json").read_text()
    capsys.readouterr()
    assert main(["agentize", str(FIXTURES / "hello-repo"), "--workspace", str(ws)]) == 0
    assert "re-verified" in capsys.readouterr().out
    assert (ws / META_DIR / "agent-card.json").read_bytes() == card
    assert (ws / META_DIR / "env.json").read_text() == env
    session = json.loads((ws / META_DIR / "session.json").read_text())
    assert session["root-trajectory"] == "traj-21a91faec2e2"  # deterministic for seed "0"


def test_ask_answers_or_says_not_found(tmp_path, capsys):
    ws = tmp_path / "ws"
    assert main(["agentize", str(FIXTURES / "hello-repo"), "--workspace", str(ws)]) == 0
    capsys.readouterr()
    assert main(["ask", str(ws), "how do I greet someone?"]) == 0
    assert "python3 hello.py greet World" in capsys.readouterr().out
    assert main(["ask", str(ws), "compile the kernel"]) == 1
    assert capsys.readouterr().out.strip() == "not found"


def test_usage_errors_exit_two(tmp_path, monkeypatch):
    assert main(["agentize", str(tmp_path / "does-not-exist")]) == 2
    assert main(["agentize", str(FIXTURES / "empty-repo"), "--workspace", str(tmp_path / "e")]) == 2
    assert main(["ask", str(tmp_path), "anything"]) == 2
    assert main(["serve", str(tmp_path)]) == 2
    monkeypatch.delenv("AGENTIZER_LLM_ENDPOINT", raising=False)
    assert main(["agentize", str(FIXTURES / "hello-repo"), "--planner", "llm",
                 "--workspace", str(tmp_path / "l")]) == 2
    bad = tmp_path / "suite.json"
    bad.write_text('{"tasks": []}')
    assert main(["bench", str(bad)]) == 2
    with pytest.raises(SystemExit) as err:
        main(["agentize"])
    assert err.value.code == 2


def test_broken_repo_stops_after_exactly_ten_retries(tmp_path):
    ws = tmp_path / "ws"
    assert main(["agentize", str(FIXTURES / "broken-repo"), "--workspace", str(ws)]) == 1
    events = run_log(ws)
    traj_retries = [e for e in events if e["event"] == "retried" and e["detail"].get("scope") == "trajectory"]
    started = [e for e in events if e["event"] == "started"]
    assert len(traj_retries) == 10
    assert [e["detail"]["attempt"] for e in traj_retries] == list(range(1, 11))
    assert len(started) <= 200
    session = json.loads((ws / META_DIR / "session.json").read_text())
    assert session["status"] == "failed" and session["retries"] == 10
    assert not audit_finished(ws)


def test_retry_cap_is_configurable(tmp_path):
    ws = tmp_path / "ws"
    assert main(["--max-retries", "2", "agentize", str(FIXTURES / "broken-repo"), "--workspace", str(ws)]) == 1
    events = run_log(ws)
    assert len([e for e in events if e["event"] == "retried" and e["detail"].get("scope") == "trajectory"]) == 2


def test_step_budget_is_fatal(tmp_path):
    ws = copy_fixture("hello-repo", tmp_path)
    assert main(["agentize", str(ws), "--max-steps", "2"]) == 1


def test_parallel_agentize_matches_serial(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["agentize", str(FIXTURES / "hello-repo"), "--workspace", str(a)]) == 0
    assert main(["agentize", str(FIXTURES / "hello-repo"), "--workspace", str(b), "--parallel", "4"]) == 0
    for name in ("env.json", "agent-card.json", "ckg.json"):
        assert (a / META_DIR / name).read_text() == (b / META_DIR / name).read_text()


def test_bench_command_prints_the_table(tmp_path, capsys):
    assert main(["bench", str(FIXTURES / "bench-suite.json"), "--workspace", str(tmp_path / "w"),
                 "--report", str(tmp_path / "bench.json")]) == 0
    out = capsys.readouterr().out
    assert "ECR 100.00%  TPR 100.00%  input tokens 0.0k  output tokens 0" in out
    assert json.loads((tmp_path / "bench.json").read_text())["tpr"] == 100.0


def test_route_command_over_live_agents(live_agents, tmp_path, capsys):
    urls = ",".join(s.base_url for s in live_agents.values())
    sample = FIXTURES / "stylize-repo" / "sample.pgm"
    code = main(["route", "--cards", urls, "--plan-file", str(FIXTURES / "router-plan.json"),
                 "--input", f"image={sample}", "stylize then caption the sample"])
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert result["response"]["output"]["caption"] == "a bright 4x4 image (mean 134.1)"
    assert main(["route", "--cards", urls, "--input", "broken", "caption it"]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "agentizer.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("agentize", "serve", "ask", "route", "bench"):
        assert command in proc.stdout
