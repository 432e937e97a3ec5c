"""Tool registry and the invocation entry point (operation application)."""

from __future__ import annotations

import logging
import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping

from agentizer.errors import (
    TOOL_ERRORS,
    AgentizerError,
    ArgumentSchemaViolation,
    ToolError,
    UnknownTool,
)
from agentizer.model import ContextItem, EnvState, Operation
from agentizer.tools.sandbox import META_DIR, SandboxPolicy, run_command

log = logging.getLogger(__name__)

_PY_TYPES: dict[str, tuple[type, ...]] = {
    "string": (str,),
    "integer": (int,),
    "number": (int, float),
    "boolean": (bool,),
    "object": (dict,),
    "array": (list, tuple),
}


class ToolStatus(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class ArgSpec:
    type: str = "string"
    required: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.type, "required": self.required}


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    argument_schema: Mapping[str, ArgSpec] = field(default_factory=dict)
    side_effecting: bool = True
    category: str = "basic"

    def validate(self, arguments: Mapping[str, Any]) -> None:
        for key in arguments:
            if key not in self.argument_schema:
                raise ArgumentSchemaViolation(f"{self.name}: unexpected argument {key!r}")
        for key, spec in self.argument_schema.items():
            if key not in arguments or arguments[key] is None:
                if spec.required:
                    raise ArgumentSchemaViolation(f"{self.name}: missing required argument {key!r}")
                continue
            value = arguments[key]
            expected = _PY_TYPES.get(spec.type, (object,))
            if isinstance(value, bool) and spec.type in ("integer", "number"):
                raise ArgumentSchemaViolation(f"{self.name}: {key!r} must be {spec.type}")
            if not isinstance(value, expected):
                raise ArgumentSchemaViolation(
                    f"{self.name}: {key!r} must be {spec.type}, got {type(value).__name__}"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "argument-schema": {k: v.to_dict() for k, v in self.argument_schema.items()},
            "side-effecting": self.side_effecting,
            "category": self.category,
        }


@dataclass(frozen=True)
class ToolResult:
    status: ToolStatus
    context_increment: tuple[ContextItem, ...] = ()
    artifacts: tuple[str, ...] = ()
    diagnostic: str = ""
    error: str | None = None
    # Non-file artifact descriptors (e.g. ``package:foo==1.0``).
    descriptors: tuple[str, ...] = ()
    data: Mapping[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is ToolStatus.SUCCESS

    @classmethod
    def success(cls, increment=(), artifacts=(), descriptors=(), **data) -> ToolResult:
        return cls(
            ToolStatus.SUCCESS,
            tuple(increment),
            tuple(str(a) for a in artifacts),
            descriptors=tuple(descriptors),
            data=data,
        )

    @classmethod
    def failure(cls, diagnostic: str, error: str = "tool-failure", increment=(), **data) -> ToolResult:
        return cls(
            ToolStatus.FAILURE,
            tuple(increment),
            (),
            diagnostic or f"{error} (no diagnostic)",
            error,
            data=data,
        )

    def raise_for_status(self) -> ToolResult:
        if not self.ok:
            raise TOOL_ERRORS.get(self.error or "", ToolError)(self.diagnostic)
        return self


@dataclass
class ToolContext:
    toolbox: Toolbox
    env: EnvState
    node_id: str | None = None

    @property
    def policy(self) -> SandboxPolicy:
        return self.toolbox.policy


Handler = Callable[[Mapping[str, Any], ToolContext], ToolResult]


class ToolRegistry:
    def __init__(self):
        self._tools: dict[str, tuple[ToolSpec, Handler]] = {}

    def register(self, spec: ToolSpec, handler: Handler) -> None:
        if spec.name in self._tools:
            raise ValueError(f"tool {spec.name!r} already registered")
        self._tools[spec.name] = (spec, handler)

    def __contains__(self, name: object) -> bool:
        return name in self._tools

    def names(self) -> list[str]:
        return sorted(self._tools)

    def spec(self, name: str) -> ToolSpec:
        try:
            return self._tools[name][0]
        except KeyError:
            raise UnknownTool(f"no tool named {name!r}") from None

    def handler(self, name: str) -> Handler:
        self.spec(name)
        return self._tools[name][1]

    def catalog(self) -> list[dict[str, Any]]:
        return [self._tools[n][0].to_dict() for n in self.names()]


class PathLocks:
    """Advisory per-path locks serializing writers of the same artifact."""

    def __init__(self):
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    @contextmanager
    def hold(self, path: str | Path) -> Iterator[None]:
        with self._guard:
            lock = self._locks[str(path)]
        with lock:
            yield


class Toolbox:
    """A registry bound to one workspace, its sandbox policy and (optionally) a planner."""

    def __init__(
        self,
        registry: ToolRegistry,
        policy: SandboxPolicy,
        *,
        planner=None,
        find_links: str | Path | None = None,
    ):
        self.registry = registry
        self.policy = policy
        self.planner = planner
        self.find_links = Path(find_links) if find_links else None
        self.locks = PathLocks()
        self._audit_lock = threading.Lock()
        self.audit: list[tuple[str, bool]] = []

    @property
    def workspace(self) -> Path:
        return self.policy.workdir

    @property
    def meta(self) -> Path:
        return self.policy.workdir / META_DIR

    def invoke(self, op: Operation, env: EnvState, node_id: str | None = None) -> ToolResult:
        registered = op.tool in self.registry
        with self._audit_lock:
            self.audit.append((op.tool, registered))
        try:
            spec = self.registry.spec(op.tool)
            spec.validate(op.arguments)
            result = self.registry.handler(op.tool)(op.arguments, ToolContext(self, env, node_id))
        except AgentizerError as exc:
            return ToolResult.failure(f"{op.tool}: {exc}", getattr(exc, "code", "tool-failure"))
        except OSError as exc:
            return ToolResult.failure(f"{op.tool}: {exc}", "tool-failure")
        if result.ok:
            missing = [a for a in result.artifacts if not _nonempty(Path(a))]
            if missing:
                return ToolResult.failure(
                    f"{op.tool}: declared artifacts missing or empty: {missing}", "tool-failure"
                )
            env.add_artifacts([f"file:{env.relpath(a)}" for a in result.artifacts])
            env.add_artifacts(result.descriptors)
        return result

    def run_command(self, command, **kwargs):
        return run_command(command, self.policy, **kwargs)


def _nonempty(path: Path) -> bool:
    if path.is_dir():
        return any(path.iterdir())
    return path.is_file() and path.stat().st_size > 0
