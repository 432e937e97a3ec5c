"""Planner backends: goal -> operation synthesis and follow-up derivation.

Two backends share one interface. :class:`ScriptedPlanner` reads a plan
file and is fully deterministic (it is the test oracle); :class:`LLMPlanner`
talks to an OpenAI-style chat-completions endpoint and demands JSON replies
that are schema-checked before the engine sees them.
"""

from __future__ import annotations

import fnmatch
import json
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema

from agentizer import ids
from agentizer.errors import NoPlan, PlannerFailure, PreconditionError
from agentizer.model import CompletionCheck, Context, Goal, GoalOrigin, Operation

PLAN_FILE_NAME = "agentize-plan.json"


class RequestKind(str, Enum):
    SYNTHESIZE_OPERATION = "synthesize-operation"
    DERIVE_FOLLOWUPS = "derive-followups"
    GENERATE_VALIDATION = "generate-validation"
    EXTRACT_SKILLS = "extract-skills"
    ANSWER_USAGE = "answer-usage"
    PLAN_ROUTE = "plan-route"


@dataclass(frozen=True)
class Usage:
    input: int = 0
    output: int = 0

    def __post_init__(self):
        if self.input < 0 or self.output < 0:
            raise PreconditionError("token counts must be non-negative")

    def __add__(self, other: Usage) -> Usage:
        return Usage(self.input + other.input, self.output + other.output)


@dataclass(frozen=True)
class PlannerRequest:
    kind: RequestKind
    goal: Goal
    context: Context = field(default_factory=Context)
    repo_summary: str = ""
    operation: Operation | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class PlannerResponse:
    operation: Operation | None = None
    followups: tuple[Goal, ...] = ()
    validation_cases: tuple[Mapping[str, Any], ...] = ()
    usage: Usage = Usage()
    raw: Any = None
    payload: Mapping[str, Any] = field(default_factory=dict)


class UsageLedger:
    """Token totals plus per-node attribution; totals always equal the attribution sum."""

    def __init__(self):
        self._lock = threading.Lock()
        self.input = 0
        self.output = 0
        self.per_node: dict[str, list[int]] = {}

    def add(self, usage: Usage, node_id: str | None = None) -> None:
        key = node_id or "(unattributed)"
        with self._lock:
            self.input += usage.input
            self.output += usage.output
            slot = self.per_node.setdefault(key, [0, 0])
            slot[0] += usage.input
            slot[1] += usage.output

    @property
    def totals(self) -> tuple[int, int]:
        with self._lock:
            return (self.input, self.output)

    def consistent(self) -> bool:
        with self._lock:
            return (
                sum(v[0] for v in self.per_node.values()) == self.input
                and sum(v[1] for v in self.per_node.values()) == self.output
            )

    def to_dict(self) -> dict[str, Any]:
        with self._lock:
            return {
                "input-tokens": self.input,
                "output-tokens": self.output,
                "per-node": {k: {"input": v[0], "output": v[1]} for k, v in sorted(self.per_node.items())},
            }

    def write(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def record_usage(resp: PlannerResponse, ledger: UsageLedger, node_id: str | None = None) -> UsageLedger:
    ledger.add(resp.usage, node_id)
    return ledger


def summarize_repo(repo: str | Path, budget: int = 4096) -> str:
    """README head plus a file-tree listing, capped at ``budget`` bytes."""
    repo = Path(repo)
    if not repo.is_dir():
        return ""
    readme_text = ""
    for name in ("README.md", "README.rst", "README.txt", "README"):
        p = repo / name
        if p.is_file():
            readme_text = p.read_text(encoding="utf-8", errors="replace")
            break
    head = readme_text[: budget // 2]
    files = []
    for p in sorted(repo.rglob("*")):
        rel = p.relative_to(repo)
        if any(part.startswith(".") for part in rel.parts):
            continue
        if p.is_file():
            files.append(rel.as_posix())
    tree = "files:\n" + "\n".join(f"  {f}" for f in files)
    out = (head + "\n\n" + tree) if head else tree
    return out.encode()[:budget].decode("utf-8", errors="ignore")


def _goal_from_template(item: Any, parent: Goal, ordinal: int) -> Goal:
    if isinstance(item, str):
        item = {"text": item}
    check = item.get("check")
    return Goal(
        id=ids.derive("goal", parent.id, ordinal),
        text=item["text"],
        origin=GoalOrigin(item.get("origin", "todo-derived")),
        inputs=tuple(item.get("inputs", ())),
        check=CompletionCheck.from_dict(check) if check else None,
        after=tuple(item.get("after", ())),
    )


def _dedup_goals(items: Sequence[Any], parent: Goal) -> tuple[Goal, ...]:
    seen: set[str] = set()
    out = []
    for item in items:
        text = item if isinstance(item, str) else item.get("text", "")
        if not text or text in seen:
            continue
        seen.add(text)
        out.append(_goal_from_template(item, parent, len(out)))
    return tuple(out)


def to_response(kind: RequestKind, payload: Any, goal: Goal, usage: Usage = Usage(), raw: Any = None) -> PlannerResponse:
    """Convert a decoded reply (scripted template or LLM JSON) into a PlannerResponse."""
    if kind is RequestKind.SYNTHESIZE_OPERATION:
        if not isinstance(payload, Mapping) or "tool" not in payload:
            raise NoPlan(f"reply for {goal.text!r} names no tool")
        return PlannerResponse(operation=Operation.from_dict(payload), usage=usage, raw=raw, payload=payload)
    if kind is RequestKind.DERIVE_FOLLOWUPS:
        items = payload if isinstance(payload, list) else payload.get("followups", [])
        return PlannerResponse(followups=_dedup_goals(items, goal), usage=usage, raw=raw, payload={"followups": items})
    if kind is RequestKind.GENERATE_VALIDATION:
        cases = payload if isinstance(payload, list) else payload.get("cases", [])
        return PlannerResponse(validation_cases=tuple(cases), usage=usage, raw=raw, payload={"cases": cases})
    if not isinstance(payload, Mapping):
        raise NoPlan(f"{kind.value} reply must be an object")
    return PlannerResponse(usage=usage, raw=raw, payload=payload)


class Planner:
    """Base class; subclasses implement :meth:`respond`."""

    def __init__(self, ledger: UsageLedger | None = None, repo_summary: str = ""):
        self.ledger = ledger or UsageLedger()
        self.repo_summary = repo_summary

    def respond(self, request: PlannerRequest) -> PlannerResponse:
        raise NotImplementedError

    def _ask(self, request: PlannerRequest, node_id: str | None) -> PlannerResponse:
        resp = self.respond(request)
        record_usage(resp, self.ledger, node_id)
        return resp

    def _request(self, kind: RequestKind, goal: Goal, context: Context | None, **kw) -> PlannerRequest:
        return PlannerRequest(kind, goal, context or Context(), self.repo_summary, **kw)

    def synthesize_operation(self, goal: Goal, context: Context, node_id: str | None = None) -> Operation:
        if not goal.text.strip():
            raise PreconditionError("goal must be non-empty")
        resp = self._ask(self._request(RequestKind.SYNTHESIZE_OPERATION, goal, context), node_id)
        if resp.operation is None:
            raise NoPlan(f"no operation for goal {goal.text!r}")
        return resp.operation

    def derive_followups(
        self, op: Operation | None, context: Context, goal: Goal, node_id: str | None = None
    ) -> list[Goal]:
        resp = self._ask(self._request(RequestKind.DERIVE_FOLLOWUPS, goal, context, operation=op), node_id)
        return list(resp.followups)

    def generate_validation(self, goal: Goal, context: Context, node_id: str | None = None):
        from agentizer.validation import cases_from_templates

        resp = self._ask(self._request(RequestKind.GENERATE_VALIDATION, goal, context), node_id)
        return cases_from_templates(resp.validation_cases, goal)

    def _freeform(self, kind: RequestKind, text: str, context: Context | None, node_id: str | None, **extra):
        goal = Goal(ids.derive("goal", kind.value, text), text, GoalOrigin.KNOWLEDGE)
        return self._ask(self._request(kind, goal, context, extra=extra), node_id).payload

    def extract_skills(self, capability: str, context: Context | None = None) -> list[Mapping[str, Any]]:
        payload = self._freeform(RequestKind.EXTRACT_SKILLS, capability, context, "a2a")
        return list(payload.get("skills", []))

    def answer_usage(self, query: str, context: Context | None = None) -> Mapping[str, Any]:
        payload = self._freeform(RequestKind.ANSWER_USAGE, query, context, "knowledge")
        if not payload.get("answer"):
            raise NoPlan(f"empty answer for {query!r}")
        return payload

    def plan_route(self, task: str, context: Context | None = None, cards: Any = None) -> Mapping[str, Any]:
        return self._freeform(RequestKind.PLAN_ROUTE, task, context, "router", cards=cards)


def _norm(text: str) -> str:
    return " ".join(text.split()).casefold()


@dataclass(frozen=True)
class PlanEntry:
    pattern: str
    kind: RequestKind
    response: Any

    def matches(self, text: str) -> bool:
        return fnmatch.fnmatchcase(_norm(text), _norm(self.pattern))


class ScriptedPlan:
    """Plan-file entries ``{pattern, kind, response}``; patterns are case-insensitive globs.

    Loading rejects pairs of same-kind entries where one pattern matches the
    other's text (a conservative overlap check); lookup additionally refuses
    to answer when more than one entry matches.
    """

    def __init__(self, entries: Sequence[PlanEntry]):
        self.entries = list(entries)
        by_kind: dict[RequestKind, list[PlanEntry]] = {}
        for e in self.entries:
            for other in by_kind.get(e.kind, []):
                if e.matches(other.pattern) or other.matches(e.pattern):
                    raise PreconditionError(
                        f"plan entries overlap for {e.kind.value}: {other.pattern!r} / {e.pattern!r}"
                    )
            by_kind.setdefault(e.kind, []).append(e)

    @classmethod
    def from_data(cls, data: Any) -> ScriptedPlan:
        raw = data.get("entries", []) if isinstance(data, Mapping) else data
        if not isinstance(raw, list):
            raise PreconditionError("plan file must hold a list of entries")
        return cls([PlanEntry(e["pattern"], RequestKind(e["kind"]), e.get("response")) for e in raw])

    @classmethod
    def load(cls, path: str | Path) -> ScriptedPlan:
        return cls.from_data(json.loads(Path(path).read_text(encoding="utf-8")))

    def lookup(self, kind: RequestKind, text: str) -> PlanEntry | None:
        hits = [e for e in self.entries if e.kind is kind and e.matches(text)]
        if len(hits) > 1:
            raise PlannerFailure(f"ambiguous plan: {len(hits)} {kind.value} entries match {text!r}")
        return hits[0] if hits else None

    def merged(self, other: ScriptedPlan) -> ScriptedPlan:
        return ScriptedPlan(self.entries + other.entries)


class ScriptedPlanner(Planner):
    """Deterministic backend; a pure function of (kind, goal text). Costs zero tokens."""

    def __init__(self, plan: ScriptedPlan, ledger: UsageLedger | None = None, repo_summary: str = ""):
        super().__init__(ledger, repo_summary)
        self.plan = plan

    @classmethod
    def from_file(cls, path: str | Path, **kw) -> ScriptedPlanner:
        return cls(ScriptedPlan.load(path), **kw)

    def respond(self, request: PlannerRequest) -> PlannerResponse:
        text = request.goal.text
        entry = self.plan.lookup(request.kind, text)
        if entry is None and request.kind is RequestKind.DERIVE_FOLLOWUPS:
            # Follow-ups may ride along with the operation entry.
            op_entry = self.plan.lookup(RequestKind.SYNTHESIZE_OPERATION, text)
            if op_entry is not None:
                return to_response(request.kind, {"followups": op_entry.response.get("followups", [])}, request.goal)
        if entry is None:
            raise NoPlan(f"no {request.kind.value} entry matches {text!r}")
        return to_response(request.kind, entry.response, request.goal, raw=entry.response)


_GOAL_ITEM = {
    "anyOf": [
        {"type": "string", "minLength": 1},
        {
            "type": "object",
            "required": ["text"],
            "properties": {
                "text": {"type": "string", "minLength": 1},
                "inputs": {"type": "array", "items": {"type": "string"}},
                "check": {"type": "object"},
                "after": {"type": "array", "items": {"type": "string"}},
            },
        },
    ]
}

REPLY_SCHEMAS: dict[RequestKind, dict[str, Any]] = {
    RequestKind.SYNTHESIZE_OPERATION: {
        "type": "object",
        "required": ["tool", "arguments"],
        "properties": {
            "tool": {"type": "string", "minLength": 1},
            "arguments": {"type": "object"},
            "rationale": {"type": "string"},
        },
    },
    RequestKind.DERIVE_FOLLOWUPS: {
        "type": "object",
        "required": ["followups"],
        "properties": {"followups": {"type": "array", "items": _GOAL_ITEM}},
    },
    RequestKind.GENERATE_VALIDATION: {
        "type": "object",
        "required": ["cases"],
        "properties": {
            "cases": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["input", "expected"],
                    "properties": {
                        "input": {"type": "string"},
                        "expected": {
                            "type": "object",
                            "required": ["kind"],
                            "properties": {
                                "kind": {"enum": ["exact-text", "file-exists-nonempty", "exit-code", "digest"]}
                            },
                        },
                    },
                },
            }
        },
    },
    RequestKind.EXTRACT_SKILLS: {
        "type": "object",
        "required": ["skills"],
        "properties": {"skills": {"type": "array", "items": {"type": "object", "required": ["name"]}}},
    },
    RequestKind.ANSWER_USAGE: {
        "type": "object",
        "required": ["answer"],
        "properties": {"answer": {"type": "string", "minLength": 1}},
    },
    RequestKind.PLAN_ROUTE: {
        "type": "object",
        "required": ["steps"],
        "properties": {"steps": {"type": "array", "items": {"type": "object", "required": ["skill"]}}},
    },
}

_INSTRUCTIONS = {
    RequestKind.SYNTHESIZE_OPERATION: "Choose ONE tool call that advances the goal.",
    RequestKind.DERIVE_FOLLOWUPS: "List the follow-up goals still required after this operation; [] when done.",
    RequestKind.GENERATE_VALIDATION: "Propose executable validation cases proving the goal is achieved.",
    RequestKind.EXTRACT_SKILLS: "Describe the agent skills this capability exposes.",
    RequestKind.ANSWER_USAGE: "Answer how to use the repository for the query.",
    RequestKind.PLAN_ROUTE: "Choose agent skills and bind their inputs to solve the task.",
}

_FENCED = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.S)


def parse_reply(kind: RequestKind, content: str) -> Any:
    """Decode and schema-check one reply; raises ValueError when malformed."""
    text = content.strip()
    m = _FENCED.match(text)
    if m:
        text = m.group(1)
    payload = json.loads(text)
    jsonschema.validate(payload, REPLY_SCHEMAS[kind])
    return payload


class LLMPlanner(Planner):
    """Chat-completions backend with structured JSON replies.

    Malformed replies are re-requested up to ``max_attempts`` times; tokens
    spent on rejected replies still count.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        *,
        ledger: UsageLedger | None = None,
        repo_summary: str = "",
        max_attempts: int = 3,
        max_concurrency: int = 4,
        timeout: float = 120.0,
        tools_catalog: Sequence[Mapping[str, Any]] = (),
    ):
        super().__init__(ledger, repo_summary)
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.max_attempts = max_attempts
        self.timeout = timeout
        self.tools_catalog = list(tools_catalog)
        self._slots = threading.BoundedSemaphore(max_concurrency)

    @classmethod
    def from_env(cls, **kw) -> LLMPlanner:
        endpoint = os.environ.get("AGENTIZER_LLM_ENDPOINT")
        model = os.environ.get("AGENTIZER_LLM_MODEL")
        if not endpoint or not model:
            raise PreconditionError("set AGENTIZER_LLM_ENDPOINT and AGENTIZER_LLM_MODEL for the llm planner")
        return cls(endpoint, model, os.environ.get("AGENTIZER_LLM_API_KEY"), **kw)

    def messages(self, request: PlannerRequest) -> list[dict[str, str]]:
        schema = json.dumps(REPLY_SCHEMAS[request.kind])
        system = (
            "You are the planner of a repository agentization engine. "
            f"{_INSTRUCTIONS[request.kind]} Reply with a single JSON object matching this schema "
            f"and nothing else: {schema}"
        )
        if request.kind is RequestKind.SYNTHESIZE_OPERATION and self.tools_catalog:
            system += "\nAvailable tools: " + json.dumps(self.tools_catalog)
        ctx = "\n---\n".join(f"[{i.kind.value}] {i.payload[:1500]}" for i in request.context.items[-20:])
        user = {
            "goal": request.goal.text,
            "operation": request.operation.to_dict() if request.operation else None,
            "repository": request.repo_summary,
            "context": ctx,
            "extra": dict(request.extra),
        }
        return [{"role": "system", "content": system}, {"role": "user", "content": json.dumps(user, default=str)}]

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        data = json.dumps(body).encode()
        req = urllib.request.Request(self.endpoint, data=data, headers={"Content-Type": "application/json"})
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode())
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                raise PlannerFailure(f"planner endpoint error: {exc}") from exc

    def respond(self, request: PlannerRequest) -> PlannerResponse:
        messages = self.messages(request)
        spent = Usage()
        errors = []
        for _ in range(self.max_attempts):
            body = self._post({"model": self.model, "messages": messages})
            usage = body.get("usage") or {}
            spent = spent + Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
            try:
                content = body["choices"][0]["message"]["content"]
                payload = parse_reply(request.kind, content)
            except (KeyError, IndexError, TypeError, ValueError, jsonschema.ValidationError) as exc:
                errors.append(str(exc).splitlines()[0])
                messages = messages + [
                    {"role": "user", "content": f"Your reply was rejected ({errors[-1]}). Reply with valid JSON only."}
                ]
                continue
            return to_response(request.kind, payload, request.goal, spent, raw=body)
        # Tokens of rejected attempts are still charged before giving up.
        self.ledger.add(spent, "(rejected)")
        raise NoPlan(f"planner replies failed schema validation {self.max_attempts} times: {errors}")
