"""Exception hierarchy.

Every error carries a stable kebab-case ``code`` so that failures can be
recorded in run logs, tool results and A2A responses without pickling
exception objects.
"""

from __future__ import annotations


class AgentizerError(Exception):
    code = "error"


class PreconditionError(AgentizerError, ValueError):
    code = "precondition"


class IllegalTransition(AgentizerError):
    code = "illegal-transition"


class CycleDetected(AgentizerError):
    code = "cycle-detected"


class UnknownNode(AgentizerError, KeyError):
    code = "unknown-node"

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class InvalidDemand(AgentizerError):
    code = "invalid-demand"


class StepBudgetExceeded(AgentizerError):
    code = "step-budget-exceeded"


class LivelockDetected(AgentizerError):
    code = "livelock-detected"


class RetriesExhausted(AgentizerError):
    code = "retries-exhausted"

    def __init__(self, message: str, trajectory=None, env=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.env = env


class NoPlan(AgentizerError):
    code = "no-plan"


class PlannerFailure(AgentizerError):
    code = "planner-failure"


class SynthesisFailed(AgentizerError):
    code = "synthesis-failed"


class ToolError(AgentizerError):
    code = "tool-failure"
    retryable = False


class UnknownTool(ToolError):
    code = "unknown-tool"


class ArgumentSchemaViolation(ToolError):
    code = "argument-schema-violation"


class SandboxViolation(ToolError):
    code = "sandbox-violation"


class ToolTimeout(ToolError):
    code = "timeout"


class NetworkError(ToolError):
    code = "network-error"
    retryable = True


class ChecksumMismatch(ToolError):
    code = "checksum-mismatch"


class ResolverConflict(ToolError):
    code = "resolver-conflict"


class InstallerMissing(ToolError):
    code = "installer-missing"


class EmptySkills(AgentizerError):
    code = "empty-skills"


class PortInUse(AgentizerError):
    code = "port-in-use"


class NoApplicableSkill(AgentizerError):
    code = "no-applicable-skill"


class DownstreamFailure(AgentizerError):
    code = "downstream-failure"

    def __init__(self, message: str, plan=None, step: int = -1, response=None):
        super().__init__(message)
        self.plan = plan
        self.step = step
        self.response = response


class MalformedSuite(AgentizerError):
    code = "malformed-suite"


TOOL_ERRORS: dict[str, type[ToolError]] = {
    cls.code: cls
    for cls in (
        ToolError,
        UnknownTool,
        ArgumentSchemaViolation,
        SandboxViolation,
        ToolTimeout,
        NetworkError,
        ChecksumMismatch,
        ResolverConflict,
        InstallerMissing,
    )
}
