import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentizer import ids
from agentizer.engine import agentize_repository
from agentizer.errors import NoPlan, PlannerFailure, PreconditionError
from agentizer.model import Context, Goal, Operation
from agentizer.planner import (
    _INSTRUCTIONS,
    LLMPlanner,
    RequestKind,
    ScriptedPlan,
    ScriptedPlanner,
    Usage,
    UsageLedger,
    parse_reply,
    summarize_repo,
)
from agentizer.tools import make_toolbox
from agentizer.tools.sandbox import META_DIR
from support import FIXTURES, copy_fixture


def goal(text):
    return Goal(ids.derive("goal", text), text)


def hello_planner():
    return ScriptedPlanner.from_file(FIXTURES / "hello-repo" / "agentize-plan.json")


def test_scripted_operation_for_install_goal():
    op = hello_planner().synthesize_operation(goal("install dependencies"), Context())
    assert op == Operation("install-deps", {"manifest": "requirements.txt", "kind": "requirements-file"})


def test_scripted_followups_ride_on_the_operation_entry():
    planner = hello_planner()
    g = goal("To agentize the given repo")
    followups = planner.derive_followups(None, Context(), g)
    assert [f.text for f in followups] == [
        "Create the venv marker file", "Write the runtime config", "Run the smoke script"]
    assert followups[2].after == ("Create the venv marker file", "Write the runtime config")
    assert [f.id for f in followups] == [ids.derive("goal", g.id, i) for i in range(3)]


def test_unknown_goal_is_no_plan():
    with pytest.raises(NoPlan):
        hello_planner().synthesize_operation(goal("launch rockets"), Context())


def test_empty_goal_is_precondition_error():
    with pytest.raises(PreconditionError):
        Goal("g", "")


def test_overlapping_entries_rejected_at_load():
    with pytest.raises(PreconditionError):
        ScriptedPlan.from_data([
            {"pattern": "run *", "kind": "synthesize-operation", "response": {"tool": "think"}},
            {"pattern": "run tests", "kind": "synthesize-operation", "response": {"tool": "finish"}},
        ])


def test_ambiguous_lookup_is_planner_failure():
    plan = ScriptedPlan.from_data([
        {"pattern": "run *", "kind": "synthesize-operation", "response": {"tool": "think"}},
        {"pattern": "* tests", "kind": "synthesize-operation", "response": {"tool": "finish"}},
    ])
    with pytest.raises(PlannerFailure):
        ScriptedPlanner(plan).synthesize_operation(goal("run the tests"), Context())


def test_patterns_are_case_insensitive():
    op = hello_planner().synthesize_operation(goal("WRITE the runtime   config"), Context())
    assert op.tool == "write-file"


def test_followup_duplicates_are_dropped():
    plan = ScriptedPlan.from_data([{"pattern": "x", "kind": "derive-followups",
                                    "response": {"followups": ["a", "b", "a"]}}])
    assert [g.text for g in ScriptedPlanner(plan).derive_followups(None, Context(), goal("x"))] == ["a", "b"]


def test_scripted_planner_costs_zero_tokens():
    planner = hello_planner()
    planner.synthesize_operation(goal("Write the runtime config"), Context(), "n1")
    assert planner.ledger.totals == (0, 0)


def test_summary_is_capped(tmp_path):
    (tmp_path / "README.md").write_text("x" * 10_000)
    assert len(summarize_repo(tmp_path, budget=512).encode()) <= 512


@given(st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 1000), st.sampled_from(["a", "b", None]))))
def test_ledger_totals_equal_attribution(entries):
    ledger = UsageLedger()
    for i, o, node in entries:
        ledger.add(Usage(i, o), node)
    assert ledger.consistent()
    assert ledger.totals == (sum(e[0] for e in entries), sum(e[1] for e in entries))


def test_parse_reply_accepts_fenced_json_and_checks_schema():
    assert parse_reply(RequestKind.ANSWER_USAGE, '```json\n{"answer": "ok"}\n```') == {"answer": "ok"}
    with pytest.raises(Exception):
        parse_reply(RequestKind.SYNTHESIZE_OPERATION, '{"arguments": {}}')


# -- an OpenAI-style chat endpoint that answers from a scripted plan --------------

class FakeChat:
    def __init__(self, plan: ScriptedPlan, bad_first: int = 0, usage=(11, 7)):
        self.scripted = ScriptedPlanner(plan)
        self.bad_first = bad_first
        self.usage = usage
        self.calls = 0
        fake = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                content = fake.reply(body["messages"])
                data = json.dumps({"choices": [{"message": {"content": content}}],
                                   "usage": {"prompt_tokens": fake.usage[0],
                                             "completion_tokens": fake.usage[1]}}).encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    def reply(self, messages):
        self.calls += 1
        if self.bad_first > 0:
            self.bad_first -= 1
            return "not json at all"
        system, user = messages[0]["content"], json.loads(messages[1]["content"])
        kind = next(k for k, text in _INSTRUCTIONS.items() if text in system)
        entry = self.scripted.plan.lookup(kind, user["goal"])
        if entry is None and kind is RequestKind.DERIVE_FOLLOWUPS:
            op_entry = self.scripted.plan.lookup(RequestKind.SYNTHESIZE_OPERATION, user["goal"])
            return json.dumps({"followups": op_entry.response.get("followups", []) if op_entry else []})
        if entry is None:
            return json.dumps({"answer": ""}) if kind is RequestKind.ANSWER_USAGE else "{}"
        response = entry.response
        if kind is RequestKind.SYNTHESIZE_OPERATION:
            response = {k: v for k, v in response.items() if k != "followups"}
        return json.dumps(response)

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def chat():
    servers = []

    def start(**kw):
        server = FakeChat(ScriptedPlan.load(FIXTURES / "hello-repo" / "agentize-plan.json"), **kw)
        servers.append(server)
        return server

    yield start
    for s in servers:
        s.close()


def test_llm_planner_retries_malformed_replies(chat):
    server = chat(bad_first=2)
    planner = LLMPlanner(server.url, "m")
    op = planner.synthesize_operation(goal("Write the runtime config"), Context(), "n1")
    assert op.tool == "write-file"
    assert server.calls == 3
    assert planner.ledger.totals == (33, 21)


def test_llm_planner_gives_up_after_three_attempts(chat):
    server = chat(bad_first=5)
    planner = LLMPlanner(server.url, "m")
    with pytest.raises(NoPlan):
        planner.synthesize_operation(goal("Write the runtime config"), Context(), "n1")
    assert server.calls == 3
    assert planner.ledger.per_node["(rejected)"] == [33, 21]
    assert planner.ledger.consistent()


def test_unreachable_endpoint_is_planner_failure():
    planner = LLMPlanner("http://127.0.0.1:9/none", "m", timeout=2)
    with pytest.raises(PlannerFailure):
        planner.synthesize_operation(goal("x"), Context())


def test_from_env_requires_configuration(monkeypatch):
    monkeypatch.delenv("AGENTIZER_LLM_ENDPOINT", raising=False)
    with pytest.raises(PreconditionError):
        LLMPlanner.from_env()


def test_llm_agentization_tokens_match_usage_file(chat, tmp_path):
    server = chat()
    repo = copy_fixture("hello-repo", tmp_path)
    planner = LLMPlanner(server.url, "m")
    result = agentize_repository(repo, planner, make_toolbox(repo, planner=planner))
    assert result.env.status.value == "finished"
    usage = json.loads((repo / META_DIR / "usage.json").read_text())
    assert (usage["input-tokens"], usage["output-tokens"]) == planner.ledger.totals
    assert planner.ledger.totals == (11 * server.calls, 7 * server.calls)
    assert planner.ledger.consistent()
