"""Tool classes: basic, file download, TODO management, dependency management,
code knowledge graph and A2A generation."""

from __future__ import annotations

from pathlib import Path

from agentizer.tools.registry import (
    ArgSpec,
    ToolContext,
    ToolRegistry,
    ToolResult,
    ToolSpec,
    ToolStatus,
    Toolbox,
)
from agentizer.tools.sandbox import CommandResult, Network, SandboxPolicy, run_command


def default_registry() -> ToolRegistry:
    from agentizer import knowledge
    from agentizer.a2a import card
    from agentizer.tools import basic, deps, download, todo

    registry = ToolRegistry()
    for module in (basic, download, todo, deps, knowledge, card):
        module.register(registry)
    return registry


def make_toolbox(
    workspace: str | Path,
    *,
    planner=None,
    wall_clock_limit: float = 60.0,
    network: Network | str = Network.DENIED,
    find_links: str | Path | None = None,
    registry: ToolRegistry | None = None,
) -> Toolbox:
    policy = SandboxPolicy(Path(workspace), wall_clock_limit=wall_clock_limit, network=Network(network))
    return Toolbox(registry or default_registry(), policy, planner=planner, find_links=find_links)


__all__ = [
    "ArgSpec",
    "CommandResult",
    "Network",
    "SandboxPolicy",
    "ToolContext",
    "ToolRegistry",
    "ToolResult",
    "ToolSpec",
    "ToolStatus",
    "Toolbox",
    "default_registry",
    "make_toolbox",
    "run_command",
]
