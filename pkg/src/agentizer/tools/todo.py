"""TODO management: structured TODO lists with append-only revisions."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from agentizer.errors import PreconditionError, SandboxViolation
from agentizer.model import Context, ContextItem, ContextKind, EnvState, Goal, GoalOrigin
from agentizer.tools.registry import ArgSpec, ToolContext, ToolRegistry, ToolResult, ToolSpec
from agentizer.tools.sandbox import META_DIR, SandboxPolicy, run_command


class TodoStatus(str, Enum):
    OPEN = "open"
    DONE = "done"
    BLOCKED = "blocked"


@dataclass
class TodoItem:
    id: str
    text: str
    status: TodoStatus = TodoStatus.OPEN
    check_kind: str = "none"
    check_arg: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "status": TodoStatus(self.status).value,
            "check-kind": self.check_kind,
            "check-arg": self.check_arg,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TodoItem:
        return cls(
            id=data["id"],
            text=data["text"],
            status=TodoStatus(data.get("status", "open")),
            check_kind=data.get("check-kind", "none"),
            check_arg=data.get("check-arg", ""),
        )

    @classmethod
    def from_goal(cls, goal: Goal) -> TodoItem:
        check = goal.check
        return cls(goal.id, goal.text, TodoStatus.OPEN, check.kind if check else "none", check.arg if check else "")


class TodoStore:
    """The ``todo.json`` document: a list of revisions, never rewritten in place.

    Each revision records the goal it was derived for and the full item list
    at that point; status updates produce a new revision as well.
    """

    _locks: dict[str, threading.Lock] = {}
    _guard = threading.Lock()

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with TodoStore._guard:
            self._lock = TodoStore._locks.setdefault(str(self.path.resolve()), threading.Lock())

    def load(self) -> list[dict[str, Any]]:
        if not self.path.exists():
            return []
        return json.loads(self.path.read_text(encoding="utf-8")).get("revisions", [])

    def _write(self, revisions: list[dict[str, Any]]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"revisions": revisions}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(self.path)

    def append(self, goal: Goal, items: list[TodoItem], reason: str = "init") -> int:
        with self._lock:
            revisions = self.load()
            revisions.append(
                {
                    "revision": len(revisions) + 1,
                    "goal": goal.id,
                    "goal-text": goal.text,
                    "reason": reason,
                    "items": [i.to_dict() for i in items],
                }
            )
            self._write(revisions)
            return len(revisions)

    def current(self, goal_id: str | None = None) -> list[TodoItem]:
        for rev in reversed(self.load()):
            if goal_id is None or rev["goal"] == goal_id:
                return [TodoItem.from_dict(i) for i in rev["items"]]
        return []

    def find(self, item_id: str) -> tuple[Goal | None, TodoItem | None]:
        for rev in reversed(self.load()):
            for raw in rev["items"]:
                if raw["id"] == item_id:
                    goal = Goal(rev["goal"], rev["goal-text"], GoalOrigin.TODO_DERIVED)
                    return goal, TodoItem.from_dict(raw)
        return None, None

    def update_status(self, item: TodoItem) -> None:
        with self._lock:
            revisions = self.load()
            for rev in reversed(revisions):
                ids = [i["id"] for i in rev["items"]]
                if item.id in ids:
                    items = [TodoItem.from_dict(i) for i in rev["items"]]
                    for it in items:
                        if it.id == item.id:
                            it.status = item.status
                    if [i.to_dict() for i in items] == rev["items"]:
                        return
                    revisions.append(
                        {
                            "revision": len(revisions) + 1,
                            "goal": rev["goal"],
                            "goal-text": rev["goal-text"],
                            "reason": f"status {item.id} -> {TodoStatus(item.status).value}",
                            "items": [i.to_dict() for i in items],
                        }
                    )
                    self._write(revisions)
                    return


def store_for(workspace: str | Path) -> TodoStore:
    return TodoStore(Path(workspace) / META_DIR / "todo.json")


def todo_init(goal: Goal, context: Context, planner, store: TodoStore, node_id: str | None = None) -> list[TodoItem]:
    """Ask the planner for follow-up goals and persist them as a TODO revision."""
    if not goal.text.strip():
        raise PreconditionError("goal text must be non-empty")
    followups = planner.derive_followups(None, context, goal, node_id=node_id)
    items = [TodoItem.from_goal(g) for g in followups]
    previous = store.load()
    store.append(goal, items, "revise" if any(r["goal"] == goal.id for r in previous) else "init")
    return items


def todo_verify(item: TodoItem, env: EnvState, policy: SandboxPolicy | None = None) -> bool:
    """Evaluate the item's completion check and update its status in place."""
    policy = policy or SandboxPolicy(env.workspace_root)
    if item.check_kind == "artifact-exists":
        try:
            target = policy.resolve(item.check_arg)
        except SandboxViolation:
            ok = False
        else:
            ok = target.exists() and (target.is_dir() or target.stat().st_size > 0)
    elif item.check_kind == "command":
        ok = run_command(item.check_arg, policy).ok
    else:
        ok = item.status is TodoStatus.DONE
    item.status = TodoStatus.DONE if ok else (TodoStatus.OPEN if item.check_kind != "none" else item.status)
    return ok


def _init_handler(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    planner = ctx.toolbox.planner
    if planner is None:
        raise PreconditionError("todo-init needs a planner bound to the toolbox")
    goal = Goal(ctx.node_id or "goal-adhoc", args["goal"], GoalOrigin.TODO_DERIVED)
    store = store_for(ctx.toolbox.workspace)
    items = todo_init(goal, Context(), planner, store, ctx.node_id)
    listing = "\n".join(f"- [{i.status.value}] {i.text}" for i in items) or "(no items)"
    return ToolResult.success(
        [ContextItem(ContextKind.DOC_SLICE, f"TODO for {goal.text}:\n{listing}", ctx.node_id)],
        artifacts=[store.path],
        items=[i.to_dict() for i in items],
    )


def _verify_handler(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    store = store_for(ctx.toolbox.workspace)
    _, item = store.find(args["item"])
    if item is None:
        raise PreconditionError(f"unknown TODO item {args['item']}")
    ok = todo_verify(item, ctx.env, ctx.policy)
    store.update_status(item)
    return ToolResult.success(
        [ContextItem(ContextKind.DOC_SLICE, f"TODO {item.id} verified: {ok}", ctx.node_id)], verified=ok
    )


def register(registry: ToolRegistry) -> None:
    registry.register(
        ToolSpec(
            "todo-init",
            "Initialize or revise the structured TODO list for a goal.",
            {"goal": ArgSpec("string", True)},
            category="todo",
        ),
        _init_handler,
    )
    registry.register(
        ToolSpec(
            "todo-verify",
            "Verify a TODO item's completion check and record the result.",
            {"item": ArgSpec("string", True)},
            side_effecting=False,
            category="todo",
        ),
        _verify_handler,
    )
