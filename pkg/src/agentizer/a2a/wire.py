"""Request and response documents exchanged over the task endpoint."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from agentizer.errors import PreconditionError


class ResponseStatus(str, Enum):
    COMPLETED = "completed"
    FAILED = "failed"
    REJECTED = "rejected"


def _canonical(data: Any) -> str:
    return json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class A2ARequest:
    task_id: str
    skill_id: str
    input: Mapping[str, Any] = field(default_factory=dict)
    context: str | None = None

    def __post_init__(self):
        if not self.task_id:
            raise PreconditionError("task-id must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        data = {"task-id": self.task_id, "skill-id": self.skill_id, "input": dict(self.input)}
        if self.context is not None:
            data["context"] = self.context
        return data

    def to_json(self) -> str:
        return _canonical(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> A2ARequest:
        if not isinstance(data, Mapping):
            raise PreconditionError("request must be an object")
        inp = data.get("input", {})
        if not isinstance(inp, Mapping):
            raise PreconditionError("request input must be an object")
        return cls(str(data["task-id"]), str(data["skill-id"]), dict(inp), data.get("context"))

    @classmethod
    def from_json(cls, text: str | bytes) -> A2ARequest:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class A2AResponse:
    task_id: str
    status: ResponseStatus
    output: Mapping[str, Any] = field(default_factory=dict)
    artifacts: tuple[str, ...] = ()
    diagnostic: str = ""
    usage: tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "status", ResponseStatus(self.status))
        object.__setattr__(self, "artifacts", tuple(self.artifacts))
        object.__setattr__(self, "usage", tuple(self.usage))

    @property
    def ok(self) -> bool:
        return self.status is ResponseStatus.COMPLETED

    def to_dict(self) -> dict[str, Any]:
        return {
            "task-id": self.task_id,
            "status": self.status.value,
            "output": dict(self.output),
            "artifacts": list(self.artifacts),
            "diagnostic": self.diagnostic,
            "usage": {"input": self.usage[0], "output": self.usage[1]},
        }

    def to_json(self) -> str:
        return _canonical(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> A2AResponse:
        usage = data.get("usage") or {}
        return cls(
            str(data["task-id"]),
            ResponseStatus(data["status"]),
            dict(data.get("output") or {}),
            tuple(data.get("artifacts") or ()),
            data.get("diagnostic", ""),
            (int(usage.get("input", 0)), int(usage.get("output", 0))),
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> A2AResponse:
        return cls.from_dict(json.loads(text))
