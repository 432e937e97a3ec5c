"""Core domain types: goals, context, nodes, operations and environment state.

All types serialize to plain JSON-compatible dicts with lower-kebab-case
keys and restore from them losslessly (``from_dict(x.to_dict()) == x``).
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from agentizer.errors import IllegalTransition, PreconditionError
from agentizer.runlog import RunLog


class GoalOrigin(str, Enum):
    REPO_ROOT = "repo-root"
    TODO_DERIVED = "todo-derived"
    VALIDATION = "validation"
    KNOWLEDGE = "knowledge"


class ContextKind(str, Enum):
    DOC_SLICE = "doc-slice"
    CODE_SLICE = "code-slice"
    COMMAND = "command"
    COMMAND_OUTPUT = "command-output"
    CONFIGURATION = "configuration"
    ARTIFACT_PATH = "artifact-path"


class NodeState(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class EnvStatus(str, Enum):
    IN_PROGRESS = "in-progress"
    FINISHED = "finished"
    FAILED = "failed"


LEGAL_TRANSITIONS: frozenset[tuple[NodeState, NodeState]] = frozenset(
    {
        (NodeState.PENDING, NodeState.RUNNING),
        (NodeState.RUNNING, NodeState.DONE),
        (NodeState.RUNNING, NodeState.FAILED),
        (NodeState.FAILED, NodeState.PENDING),
    }
)

_TRANSITION_EVENTS = {
    NodeState.RUNNING: "started",
    NodeState.DONE: "done",
    NodeState.FAILED: "failed",
    NodeState.PENDING: "retried",
}


@dataclass(frozen=True)
class CompletionCheck:
    """How a goal (and its TODO item) is verified as complete.

    ``kind`` is one of ``artifact-exists``, ``command`` or ``none``.
    """

    kind: str = "none"
    arg: str = ""

    def __post_init__(self):
        if self.kind not in ("artifact-exists", "command", "none"):
            raise PreconditionError(f"unknown completion check kind {self.kind!r}")
        if self.kind != "none" and not self.arg:
            raise PreconditionError(f"{self.kind} check needs an argument")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "arg": self.arg}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CompletionCheck:
        return cls(kind=data.get("kind", "none"), arg=data.get("arg", ""))


@dataclass(frozen=True)
class Goal:
    id: str
    text: str
    origin: GoalOrigin = GoalOrigin.TODO_DERIVED
    # Workspace-relative paths that must exist before a node for this goal may run.
    inputs: tuple[str, ...] = ()
    check: CompletionCheck | None = None
    # Texts of sibling TODO goals that must complete first.
    after: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise PreconditionError("goal id must be non-empty")
        if not self.text or not self.text.strip():
            raise PreconditionError("goal text must be non-empty")
        object.__setattr__(self, "origin", GoalOrigin(self.origin))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "after", tuple(self.after))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "origin": self.origin.value,
            "inputs": list(self.inputs),
            "check": self.check.to_dict() if self.check else None,
            "after": list(self.after),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Goal:
        check = data.get("check")
        return cls(
            id=data["id"],
            text=data["text"],
            origin=GoalOrigin(data.get("origin", "todo-derived")),
            inputs=tuple(data.get("inputs", ())),
            check=CompletionCheck.from_dict(check) if check else None,
            after=tuple(data.get("after", ())),
        )


@dataclass(frozen=True)
class ContextItem:
    kind: ContextKind
    payload: str
    source_node: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ContextKind(self.kind))
        if not self.payload:
            raise PreconditionError("context item payload must be non-empty")
        if self.kind is ContextKind.ARTIFACT_PATH and not Path(self.payload).exists():
            raise PreconditionError(f"artifact path does not exist: {self.payload}")

    @property
    def key(self) -> str:
        """Identity used for deduplication: hash of kind and payload only."""
        h = hashlib.sha256()
        h.update(self.kind.value.encode())
        h.update(b"\0")
        h.update(self.payload.encode("utf-8", "surrogatepass"))
        return h.hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "payload": self.payload, "source-node": self.source_node}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ContextItem:
        # Restoring a persisted item must not re-check artifact existence: the
        # invariant holds at creation time only.
        item = object.__new__(cls)
        object.__setattr__(item, "kind", ContextKind(data["kind"]))
        object.__setattr__(item, "payload", data["payload"])
        object.__setattr__(item, "source_node", data.get("source-node"))
        if not item.payload:
            raise PreconditionError("context item payload must be non-empty")
        return item


@dataclass(frozen=True)
class Context:
    items: tuple[ContextItem, ...] = ()
    _keys: frozenset[str] = field(default=frozenset(), init=False, repr=False, compare=False)

    def __post_init__(self):
        seen: dict[str, ContextItem] = {}
        for item in self.items:
            seen.setdefault(item.key, item)
        if len(seen) != len(self.items):
            object.__setattr__(self, "items", tuple(seen.values()))
        else:
            object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "_keys", frozenset(seen))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, item: object) -> bool:
        return isinstance(item, ContextItem) and item.key in self._keys

    def merge(self, increment: Iterable[ContextItem]) -> Context:
        return context_merge(self, increment)

    def digest(self) -> str:
        h = hashlib.sha256()
        for item in self.items:
            h.update(item.key.encode())
        return h.hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {"items": [i.to_dict() for i in self.items]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Context:
        return cls(tuple(ContextItem.from_dict(i) for i in data.get("items", ())))


def context_merge(base: Context, increment: Iterable[ContextItem]) -> Context:
    """Order-preserving set union: ``base`` followed by new items of ``increment``."""
    keys = set(base._keys)
    added = []
    for item in increment:
        if item.key not in keys:
            keys.add(item.key)
            added.append(item)
    if not added:
        return base
    merged = object.__new__(Context)
    object.__setattr__(merged, "items", base.items + tuple(added))
    object.__setattr__(merged, "_keys", frozenset(keys))
    return merged


@dataclass(frozen=True)
class Operation:
    tool: str
    arguments: Mapping[str, Any] = field(default_factory=dict)
    rationale: str = ""

    def __post_init__(self):
        if not self.tool:
            raise PreconditionError("operation must name a tool")
        object.__setattr__(self, "arguments", dict(self.arguments))

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool, "arguments": dict(self.arguments), "rationale": self.rationale}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Operation:
        return cls(
            tool=data["tool"],
            arguments=dict(data.get("arguments", data.get("args", {}))),
            rationale=data.get("rationale", ""),
        )


@dataclass
class Node:
    id: str
    goal: Goal
    operation: Operation | None = None
    context: Context = field(default_factory=Context)
    state: NodeState = NodeState.PENDING
    followups: list[Goal] = field(default_factory=list)
    weight: float | None = None
    resource_demands: dict[str, int] = field(default_factory=dict)
    # Set when execution of this node is delegated to a sub-trajectory.
    subtrajectory: str | None = None
    diagnostic: str = ""

    def __post_init__(self):
        self.state = NodeState(self.state)
        if self.weight is not None and not self.weight > 0:
            raise PreconditionError(f"node weight must be strictly positive, got {self.weight}")
        for rtype, qty in self.resource_demands.items():
            if qty < 0:
                raise PreconditionError(f"negative demand for {rtype!r}")
        self.check()

    def check(self) -> None:
        if self.state is NodeState.PENDING:
            if self.operation is not None:
                raise PreconditionError(f"pending node {self.id} must not carry an operation")
            if self.followups:
                raise PreconditionError(f"pending node {self.id} must not have follow-ups")
        elif self.state is NodeState.DONE and self.operation is None:
            raise PreconditionError(f"done node {self.id} has no operation")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "goal": self.goal.to_dict(),
            "operation": self.operation.to_dict() if self.operation else None,
            "context": self.context.to_dict(),
            "state": self.state.value,
            "followups": [g.to_dict() for g in self.followups],
            "weight": self.weight,
            "resource-demands": dict(self.resource_demands),
            "subtrajectory": self.subtrajectory,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Node:
        op = data.get("operation")
        return cls(
            id=data["id"],
            goal=Goal.from_dict(data["goal"]),
            operation=Operation.from_dict(op) if op else None,
            context=Context.from_dict(data.get("context", {})),
            state=NodeState(data.get("state", "pending")),
            followups=[Goal.from_dict(g) for g in data.get("followups", ())],
            weight=data.get("weight"),
            resource_demands=dict(data.get("resource-demands", {})),
            subtrajectory=data.get("subtrajectory"),
            diagnostic=data.get("diagnostic", ""),
        )


def transition_state(
    node: Node, target: NodeState, log: RunLog | None = None, detail: Any = None
) -> Node:
    target = NodeState(target)
    if (node.state, target) not in LEGAL_TRANSITIONS:
        raise IllegalTransition(f"node {node.id}: {node.state.value} -> {target.value}")
    previous = node.state
    node.state = target
    if target is NodeState.PENDING:
        node.operation = None
        node.followups = []
    if log is not None:
        info = {"from": previous.value, "to": target.value}
        if detail:
            info.update(detail if isinstance(detail, dict) else {"detail": detail})
        log.append(node.id, _TRANSITION_EVENTS[target], info)
    return node


class EnvState:
    """Mutable environment state shared by workers; all mutation is locked.

    Artifact descriptors are strings such as ``file:config.json`` or
    ``package:foo==1.0``; file paths are workspace-relative so that two
    workspaces built from the same inputs compare equal.
    """

    def __init__(
        self,
        workspace_root: str | Path,
        installed_artifacts: Iterable[str] = (),
        completed_goals: Iterable[str] = (),
        status: EnvStatus = EnvStatus.IN_PROGRESS,
    ):
        self.workspace_root = Path(workspace_root)
        self._artifacts = set(installed_artifacts)
        self._completed = set(completed_goals)
        self._status = EnvStatus(status)
        self._lock = threading.Lock()

    @property
    def installed_artifacts(self) -> frozenset[str]:
        with self._lock:
            return frozenset(self._artifacts)

    @property
    def completed_goals(self) -> frozenset[str]:
        with self._lock:
            return frozenset(self._completed)

    @property
    def status(self) -> EnvStatus:
        return self._status

    def add_artifacts(self, descriptors: Iterable[str]) -> None:
        with self._lock:
            self._artifacts.update(descriptors)

    def complete_goal(self, goal_id: str) -> None:
        with self._lock:
            self._completed.add(goal_id)

    def mark_finished(self, report) -> None:
        if not getattr(report, "passed", False):
            raise PreconditionError("environment can only finish after a passing repo-level gate")
        self._status = EnvStatus.FINISHED

    def mark_failed(self) -> None:
        self._status = EnvStatus.FAILED

    def reopen(self) -> None:
        self._status = EnvStatus.IN_PROGRESS

    def relpath(self, path: str | Path) -> str:
        p = Path(path)
        try:
            return p.resolve().relative_to(self.workspace_root.resolve()).as_posix()
        except ValueError:
            return p.as_posix()

    def to_dict(self, include_root: bool = True) -> dict[str, Any]:
        with self._lock:
            data = {
                "installed-artifacts": sorted(self._artifacts),
                "completed-goals": sorted(self._completed),
                "status": self._status.value,
            }
        if include_root:
            data = {"workspace-root": str(self.workspace_root), **data}
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EnvState:
        return cls(
            workspace_root=data["workspace-root"],
            installed_artifacts=data.get("installed-artifacts", ()),
            completed_goals=data.get("completed-goals", ()),
            status=EnvStatus(data.get("status", "in-progress")),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvState):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"EnvState({self.to_dict()!r})"
