"""Router: composes several repository agents into one bound workflow."""

from __future__ import annotations

import base64
import mimetypes
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from agentizer import ids
from agentizer.a2a.card import AgentCard, AgentSkill
from agentizer.a2a.wire import A2ARequest, A2AResponse, ResponseStatus
from agentizer.errors import DownstreamFailure, NoApplicableSkill, NoPlan, PreconditionError
from agentizer.knowledge import tokens


@dataclass(frozen=True)
class Binding:
    """Where one input value of a step comes from.

    Exactly one source: an earlier step's output field, a task input, or a
    literal value.
    """

    from_step: int | None = None
    output: str | None = None
    task_input: str | None = None
    value: Any = None

    def __post_init__(self):
        sources = [self.from_step is not None, self.task_input is not None, self.value is not None]
        if sum(sources) != 1:
            raise PreconditionError("a binding needs exactly one source")
        if self.from_step is not None and not self.output:
            raise PreconditionError("a step binding must name the output field")

    def to_dict(self) -> dict[str, Any]:
        if self.from_step is not None:
            return {"from-step": self.from_step, "output": self.output}
        if self.task_input is not None:
            return {"task-input": self.task_input}
        return {"value": self.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Binding:
        return cls(data.get("from-step"), data.get("output"), data.get("task-input"), data.get("value"))


@dataclass(frozen=True)
class RouterStep:
    agent: str  # agent-name of the card
    skill: str
    bindings: Mapping[str, Binding] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"agent": self.agent, "skill": self.skill,
                "bind": {k: b.to_dict() for k, b in sorted(self.bindings.items())}}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RouterStep:
        return cls(data["agent"], data["skill"],
                   {k: Binding.from_dict(v) for k, v in (data.get("bind") or {}).items()})


@dataclass(frozen=True)
class RouterPlan:
    steps: tuple[RouterStep, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        for i, step in enumerate(self.steps):
            for name, b in step.bindings.items():
                if b.from_step is not None and not 0 <= b.from_step < i:
                    raise PreconditionError(
                        f"step {i} input {name!r} binds step {b.from_step}, which does not precede it"
                    )

    def binding_edges(self) -> set[tuple[int, int]]:
        return {(b.from_step, i) for i, s in enumerate(self.steps) for b in s.bindings.values()
                if b.from_step is not None}

    def to_dict(self) -> dict[str, Any]:
        return {"steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RouterPlan:
        return cls(tuple(RouterStep.from_dict(s) for s in data.get("steps", ())))


def _resolve_card(cards: Sequence[AgentCard], agent: str) -> AgentCard:
    for card in cards:
        if agent in (card.agent_name, card.repo_identifier, card.endpoint):
            return card
    raise NoApplicableSkill(f"router plan names unknown agent {agent!r}")


def _first_file(schema: Mapping[str, Any]) -> str | None:
    return next((k for k, v in schema.items() if v.type == "file"), None)


def heuristic_plan(task: str, cards: Sequence[AgentCard], task_inputs: Mapping[str, Any]) -> RouterPlan:
    """Pick skills whose name mentions a task word, in the order the task mentions them.

    Consecutive steps are chained file-output to file-input; the first step
    reads task inputs by field name (or the single task input).
    """
    words = [t for t in (tokens(w) for w in task.split()) if t]
    position: dict[str, int] = {}
    for i, toks in enumerate(words):
        for tok in toks:
            position.setdefault(tok, i)
    named = [(card, skill, tokens(skill.name) | tokens(skill.id)) for card in cards for skill in card.skills]
    # Words shared by several skill names ("image") do not discriminate between them.
    df: dict[str, int] = {}
    for _, _, toks in named:
        for tok in toks:
            df[tok] = df.get(tok, 0) + 1
    hits: list[tuple[int, str, AgentCard, AgentSkill]] = []
    for card, skill, name_toks in named:
        distinct = {t for t in name_toks if df[t] == 1} or name_toks
        found = [position[t] for t in distinct if t in position]
        if found:
            hits.append((min(found), skill.id, card, skill))
    if not hits:
        raise NoApplicableSkill(f"no skill matches task {task!r}")
    hits.sort(key=lambda h: (h[0], h[2].agent_name, h[1]))
    steps: list[RouterStep] = []
    seen: set[tuple[str, str]] = set()
    prev: AgentSkill | None = None
    for _, _, card, skill in hits:
        if (card.agent_name, skill.id) in seen:
            continue
        seen.add((card.agent_name, skill.id))
        binds: dict[str, Binding] = {}
        for name, spec in skill.input_schema.items():
            if prev is not None and spec.type == "file" and name == _first_file(skill.input_schema):
                src = _first_file(prev.output_schema)
                if src is not None:
                    binds[name] = Binding(from_step=len(steps) - 1, output=src)
                    continue
            if name in task_inputs:
                binds[name] = Binding(task_input=name)
            elif spec.required and len(task_inputs) == 1:
                binds[name] = Binding(task_input=next(iter(task_inputs)))
        steps.append(RouterStep(card.agent_name, skill.id, binds))
        prev = skill
    return RouterPlan(tuple(steps))


def to_data_url(path: str | Path) -> str:
    path = Path(path)
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    payload = base64.b64encode(path.read_bytes()).decode()
    return f"data:{mime};name={path.name};base64,{payload}"


Send = Callable[[str, A2ARequest], A2AResponse]


def route(
    task: str,
    cards: Sequence[AgentCard],
    planner=None,
    *,
    inputs: Mapping[str, Any] | None = None,
    send: Send | None = None,
    task_id: str | None = None,
) -> tuple[RouterPlan, A2AResponse]:
    """Plan and execute ``task`` over ``cards``; steps run strictly in order.

    The first failing step raises DownstreamFailure and later steps are not
    invoked.
    """
    from agentizer.a2a.service import send_task

    send = send or send_task
    inputs = dict(inputs or {})
    if not cards:
        raise NoApplicableSkill("no agent cards to route over")
    plan = None
    if planner is not None:
        try:
            payload = planner.plan_route(task, cards=[c.to_dict() for c in cards])
            plan = RouterPlan.from_dict(payload)
        except NoPlan:
            plan = None
    if plan is None:
        plan = heuristic_plan(task, cards, inputs)
    if not plan.steps:
        raise NoApplicableSkill(f"empty plan for task {task!r}")
    resolved = []
    for step in plan.steps:
        card = _resolve_card(cards, step.agent)
        skill = card.skill(step.skill)
        if skill is None:
            raise NoApplicableSkill(f"agent {card.agent_name} has no skill {step.skill!r}")
        resolved.append((card, skill))

    root_id = task_id or ids.derive("task", task, len(plan.steps))
    outputs: list[Mapping[str, Any]] = []
    artifacts: list[str] = []
    spent = [0, 0]
    last: A2AResponse | None = None
    for i, (step, (card, skill)) in enumerate(zip(plan.steps, resolved)):
        value: dict[str, Any] = {}
        for name, b in step.bindings.items():
            if b.from_step is not None:
                value[name] = outputs[b.from_step].get(b.output)
            elif b.task_input is not None:
                raw = inputs.get(b.task_input)
                spec = skill.input_schema.get(name)
                if spec is not None and spec.type == "file" and isinstance(raw, str) and Path(raw).is_file():
                    raw = to_data_url(raw)
                value[name] = raw
            else:
                value[name] = b.value
        request = A2ARequest(f"{root_id}.{i}", skill.id, {k: v for k, v in value.items() if v is not None}, task)
        last = send(card.endpoint, request)
        if last.task_id != request.task_id:
            last = A2AResponse(request.task_id, ResponseStatus.FAILED,
                               diagnostic=f"agent echoed task-id {last.task_id!r}")
        if not last.ok:
            raise DownstreamFailure(
                f"step {i} ({card.agent_name}/{skill.id}) {last.status.value}: {last.diagnostic}",
                plan=plan, step=i, response=last,
            )
        outputs.append(last.output)
        artifacts.extend(last.artifacts)
        spent[0] += last.usage[0]
        spent[1] += last.usage[1]
    final = A2AResponse(root_id, ResponseStatus.COMPLETED, dict(last.output), tuple(artifacts), "", tuple(spent))
    return plan, final
