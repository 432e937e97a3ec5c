"""Agent skills and agent cards.

A skill is backed by a capability of the code knowledge graph and an
invocation template in which ``{in:field}`` and ``{out:field}`` mark where
request inputs and allocated output paths are substituted. The card is
validated against the published JSON schema on every emit and parse.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from agentizer import ids
from agentizer.errors import AgentizerError, EmptySkills, NoPlan, PreconditionError
from agentizer.knowledge import (
    CodeKnowledgeGraph,
    EntityKind,
    UsageKB,
    build_ckg,
    build_usage_kb,
    ckg_path,
    kb_path,
)
from agentizer.model import Context, ContextItem, ContextKind
from agentizer.tools.registry import ArgSpec, ToolContext, ToolRegistry, ToolResult, ToolSpec
from agentizer.tools.sandbox import META_DIR

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "agentizer-a2a/1"
CARD_PATH = "/.well-known/agent-card"
DEFAULT_ENDPOINT = "http://127.0.0.1:8700"
FIELD_TYPES = ("string", "integer", "number", "boolean", "file")
PLACEHOLDER = re.compile(r"\{(in|out):([A-Za-z_][A-Za-z0-9_-]*)\}")


@lru_cache(maxsize=1)
def card_schema() -> dict[str, Any]:
    text = resources.files("agentizer.a2a").joinpath("card-schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@lru_cache(maxsize=1)
def _card_validator() -> jsonschema.Draft202012Validator:
    schema = card_schema()
    jsonschema.Draft202012Validator.check_schema(schema)
    return jsonschema.Draft202012Validator(schema)


@dataclass(frozen=True)
class FieldSpec:
    type: str = "string"
    required: bool = True

    def __post_init__(self):
        if self.type not in FIELD_TYPES:
            raise PreconditionError(f"unknown field type {self.type!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.type, "required": self.required}


def _schema_from_dict(data: Mapping[str, Any]) -> dict[str, FieldSpec]:
    return {k: FieldSpec(v.get("type", "string"), bool(v.get("required", True))) for k, v in data.items()}


@dataclass(frozen=True)
class AgentSkill:
    id: str
    name: str
    description: str
    input_schema: Mapping[str, FieldSpec]
    output_schema: Mapping[str, FieldSpec]
    capability: str
    template: str
    # output field -> "stdout" or "file:<ext>"
    outputs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.input_schema or not self.output_schema:
            raise PreconditionError(f"skill {self.id}: input and output schemas must be non-empty")
        for name, kind in PLACEHOLDER.findall(self.template):
            schema = self.input_schema if name == "in" else self.output_schema
            if kind not in schema:
                raise PreconditionError(f"skill {self.id}: template references unknown field {name}:{kind}")
        for fname in self.output_schema:
            if fname not in self.outputs:
                raise PreconditionError(f"skill {self.id}: output {fname!r} has no source")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "input-schema": {k: v.to_dict() for k, v in self.input_schema.items()},
            "output-schema": {k: v.to_dict() for k, v in self.output_schema.items()},
            "backing": {"capability": self.capability, "template": self.template, "outputs": dict(self.outputs)},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AgentSkill:
        backing = data["backing"]
        return cls(
            id=data["id"],
            name=data["name"],
            description=data.get("description", ""),
            input_schema=_schema_from_dict(data["input-schema"]),
            output_schema=_schema_from_dict(data["output-schema"]),
            capability=backing["capability"],
            template=backing["template"],
            outputs=dict(backing.get("outputs", {})),
        )

    def request_schema(self) -> dict[str, Any]:
        """JSON schema for the ``input`` value of a request to this skill."""
        py = {"string": "string", "file": "string", "integer": "integer", "number": "number", "boolean": "boolean"}
        return {
            "type": "object",
            "additionalProperties": False,
            "required": sorted(k for k, v in self.input_schema.items() if v.required),
            "properties": {k: {"type": py[v.type]} for k, v in self.input_schema.items()},
        }

    def response_schema(self) -> dict[str, Any]:
        return {
            "type": "object",
            "additionalProperties": False,
            "required": sorted(k for k, v in self.output_schema.items() if v.required),
            "properties": {k: {"type": "string" if v.type == "file" else v.type} for k, v in self.output_schema.items()},
        }


@dataclass(frozen=True)
class AgentCard:
    agent_name: str
    repo_identifier: str
    version: str
    description: str
    skills: tuple[AgentSkill, ...]
    endpoint: str
    protocol_version: str = PROTOCOL_VERSION

    def __post_init__(self):
        object.__setattr__(self, "skills", tuple(self.skills))
        if not self.skills:
            raise EmptySkills("an agent card needs at least one skill")

    def skill(self, skill_id: str) -> AgentSkill | None:
        return next((s for s in self.skills if s.id == skill_id), None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent-name": self.agent_name,
            "repo-identifier": self.repo_identifier,
            "version": self.version,
            "description": self.description,
            "skills": [s.to_dict() for s in self.skills],
            "endpoint": self.endpoint,
            "protocol-version": self.protocol_version,
        }

    def to_json(self) -> str:
        data = self.to_dict()
        _card_validator().validate(data)
        return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AgentCard:
        _card_validator().validate(dict(data))
        return cls(
            agent_name=data["agent-name"],
            repo_identifier=data["repo-identifier"],
            version=data["version"],
            description=data["description"],
            skills=tuple(AgentSkill.from_dict(s) for s in data["skills"]),
            endpoint=data["endpoint"],
            protocol_version=data["protocol-version"],
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> AgentCard:
        return cls.from_dict(json.loads(text))

    def with_endpoint(self, endpoint: str) -> AgentCard:
        return AgentCard(self.agent_name, self.repo_identifier, self.version, self.description, self.skills,
                         endpoint, self.protocol_version)


def card_path(workspace: str | Path) -> Path:
    return Path(workspace) / META_DIR / "agent-card.json"


def _skill_from_template(tpl: Mapping[str, Any], cap_id: str) -> dict[str, Any]:
    outputs = dict(tpl.get("outputs") or {"stdout": "stdout"})
    out_schema = {k: FieldSpec("string" if v == "stdout" else "file", True) for k, v in outputs.items()}
    inputs = tpl.get("inputs") or {}
    return {
        "name": tpl["name"],
        "description": tpl.get("description", ""),
        "input_schema": {k: FieldSpec(v.get("type", "string"), bool(v.get("required", True))) for k, v in inputs.items()},
        "output_schema": out_schema,
        "capability": cap_id,
        "template": tpl["template"],
        "outputs": outputs,
    }


def _heuristic_skill(cap, graph: CodeKnowledgeGraph) -> dict[str, Any] | None:
    """Fallback: expose the capability's entry point with free-form arguments."""
    base = None
    for eid in cap.attrs.get("entry-points", ()):
        ent = graph.entities.get(eid)
        if ent is not None and ent.attrs.get("script"):
            base = ent.attrs["command"]
            break
    if base is None:
        commands = cap.attrs.get("commands") or []
        if not commands:
            return None
        base = commands[0]
    return {
        "name": cap.name,
        "description": cap.summary or cap.name,
        "input_schema": {"args": FieldSpec("string", False)},
        "output_schema": {"stdout": FieldSpec("string", True)},
        "capability": cap.id,
        "template": f"{base} {{in:args}}",
        "outputs": {"stdout": "stdout"},
    }


def extract_skills(graph: CodeKnowledgeGraph, kb: UsageKB | None = None, planner=None) -> list[AgentSkill]:
    """One or more skills per capability; ids are slugs, suffixed ``-2``, ``-3`` on collision."""
    caps = graph.of_kind(EntityKind.CAPABILITY)
    if not caps:
        log.warning("no capabilities in the code knowledge graph; no skills extracted")
        return []
    raw: list[dict[str, Any]] = []
    for cap in caps:
        templates = None
        if planner is not None:
            ctx = Context(tuple(ContextItem(ContextKind.COMMAND, c, cap.id) for c in cap.attrs.get("commands", ())))
            try:
                templates = planner.extract_skills(cap.name, ctx)
            except NoPlan:
                templates = None
        if templates:
            raw.extend(_skill_from_template(t, cap.id) for t in templates)
        else:
            fallback = _heuristic_skill(cap, graph)
            if fallback is not None:
                raw.append(fallback)
    skills, used = [], set()
    for spec in raw:
        base = ids.slug(spec["name"])
        sid, n = base, 2
        while sid in used:
            sid, n = f"{base}-{n}", n + 1
        used.add(sid)
        if spec["capability"] not in graph.entities:
            raise PreconditionError(f"skill {sid} backs unknown capability {spec['capability']}")
        skills.append(AgentSkill(id=sid, **spec))
    return skills


def repo_meta(workspace: str | Path) -> dict[str, str]:
    workspace = Path(workspace)
    name = workspace.resolve().name
    source = workspace / META_DIR / "source.json"
    if source.is_file():
        name = json.loads(source.read_text(encoding="utf-8")).get("repo-name") or name
    description = ""
    for readme in ("README.md", "README.rst", "README.txt", "README"):
        p = workspace / readme
        if p.is_file():
            for para in re.split(r"\n\s*\n", p.read_text(encoding="utf-8", errors="replace")):
                para = " ".join(line for line in para.splitlines() if not line.startswith("#")).strip()
                if para and not para.startswith("```"):
                    description = para
                    break
            break
    version = "0.1.0"
    pyproject = workspace / "pyproject.toml"
    if pyproject.is_file():
        m = re.search(r'^version\s*=\s*"([0-9]+\.[0-9]+\.[0-9]+)"', pyproject.read_text(errors="replace"), re.M)
        if m:
            version = m.group(1)
    return {"agent-name": f"{ids.slug(name)}-agent", "repo-identifier": name, "version": version,
            "description": description or f"Repository agent for {name}"}


def emit_agent_card(skills, meta: Mapping[str, str], endpoint: str, path: str | Path | None = None) -> AgentCard:
    if not skills:
        raise EmptySkills("cannot emit an agent card without skills")
    card = AgentCard(meta["agent-name"], meta["repo-identifier"], meta["version"], meta["description"],
                     tuple(skills), endpoint)
    text = card.to_json()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    return card


def load_card(path: str | Path) -> AgentCard:
    return AgentCard.from_json(Path(path).read_text(encoding="utf-8"))


def generate(workspace: str | Path, planner=None, toolbox=None, endpoint: str = DEFAULT_ENDPOINT, history=None):
    """Phase three: CKG, usage KB, skills and card, all persisted under the workspace."""
    workspace = Path(workspace)
    graph = build_ckg(workspace)
    errors = graph.integrity_errors(workspace)
    if errors:
        raise PreconditionError("code knowledge graph integrity violated: " + "; ".join(errors))
    graph.save(ckg_path(workspace))
    kb = build_usage_kb(graph, history, planner, toolbox)
    kb.save(kb_path(workspace))
    skills = extract_skills(graph, kb, planner)
    card = emit_agent_card(skills, repo_meta(workspace), endpoint, card_path(workspace))
    return graph, kb, card


def _handler(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    endpoint = args.get("endpoint") or DEFAULT_ENDPOINT
    try:
        graph, kb, card = generate(ctx.toolbox.workspace, ctx.toolbox.planner, ctx.toolbox, endpoint)
    except jsonschema.ValidationError as exc:
        raise AgentizerError(f"agent card failed schema validation: {exc.message}") from exc
    listing = ", ".join(s.id for s in card.skills)
    return ToolResult.success(
        [ContextItem(ContextKind.CONFIGURATION, f"agent card {card.agent_name}: skills {listing}", ctx.node_id)],
        artifacts=[card_path(ctx.toolbox.workspace), ckg_path(ctx.toolbox.workspace), kb_path(ctx.toolbox.workspace)],
        skills=[s.id for s in card.skills],
    )


def register(registry: ToolRegistry) -> None:
    registry.register(
        ToolSpec(
            "a2a-generate",
            "Extract agent skills from the code knowledge graph and usage KB and emit the agent card.",
            {"endpoint": ArgSpec("string")},
            category="a2a",
        ),
        _handler,
    )
