"""End-to-end driver: provision a workspace, agentize it, publish the agent card."""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

from agentizer.a2a.card import DEFAULT_ENDPOINT, AgentCard, card_path, generate, load_card
from agentizer.engine import AgentizeResult, agentize_repository
from agentizer.errors import PreconditionError
from agentizer.graph import ResourceCaps, RunLimits
from agentizer.model import EnvState, EnvStatus
from agentizer.planner import PLAN_FILE_NAME, LLMPlanner, Planner, ScriptedPlanner, summarize_repo
from agentizer.tools import default_registry, make_toolbox
from agentizer.tools.registry import Toolbox
from agentizer.tools.sandbox import META_DIR

log = logging.getLogger(__name__)


def make_planner(kind: str, plan_file: str | Path | None, repo: str | Path) -> Planner:
    summary = summarize_repo(repo)
    if kind == "scripted":
        path = Path(plan_file) if plan_file else Path(repo) / PLAN_FILE_NAME
        if not path.is_file():
            raise PreconditionError(f"scripted planner needs a plan file; {path} not found")
        return ScriptedPlanner.from_file(path, repo_summary=summary)
    if kind == "llm":
        return LLMPlanner.from_env(repo_summary=summary, tools_catalog=default_registry().catalog())
    raise PreconditionError(f"unknown planner {kind!r}")


def provision(repo: Path, workspace: Path | None) -> Path:
    """The workspace defaults to the repository itself; otherwise the repo is copied in once."""
    if not repo.is_dir():
        raise PreconditionError(f"repository directory does not exist: {repo}")
    if workspace is None or workspace.resolve() == repo.resolve():
        return repo
    if workspace.exists() and any(workspace.iterdir()):
        return workspace
    shutil.copytree(repo, workspace, dirs_exist_ok=True, symlinks=True,
                    ignore=shutil.ignore_patterns(META_DIR, "__pycache__", ".git"))
    # The card names the source repository, not the workspace directory.
    source = workspace / META_DIR / "source.json"
    source.parent.mkdir(parents=True, exist_ok=True)
    source.write_text(json.dumps({"repo-name": repo.resolve().name}) + "\n", encoding="utf-8")
    return workspace


@dataclass
class AgentizeOutcome:
    workspace: Path
    result: AgentizeResult
    card: AgentCard
    planner: Planner
    toolbox: Toolbox


def agentize(
    repo: str | Path,
    *,
    workspace: str | Path | None = None,
    planner: str | Planner = "scripted",
    plan_file: str | Path | None = None,
    limits: RunLimits | None = None,
    caps: ResourceCaps | None = None,
    seed: str = "0",
    endpoint: str = DEFAULT_ENDPOINT,
    find_links: str | Path | None = None,
    wall_clock_limit: float = 60.0,
) -> AgentizeOutcome:
    repo = Path(repo)
    ws = provision(repo, Path(workspace) if workspace else None)
    plan_file = plan_file or (repo / PLAN_FILE_NAME)
    backend = planner if isinstance(planner, Planner) else make_planner(planner, plan_file, ws)
    if find_links is None and (ws / "wheels").is_dir():
        find_links = ws / "wheels"
    toolbox = make_toolbox(ws, planner=backend, find_links=find_links, wall_clock_limit=wall_clock_limit)
    result = agentize_repository(ws, backend, toolbox, limits, caps, seed=seed)
    cpath = card_path(ws)
    if result.reverified and cpath.is_file():
        card = load_card(cpath)
    else:
        _, _, card = generate(ws, backend, toolbox, endpoint, history=result.trajectory)
    backend.ledger.write(ws / META_DIR / "usage.json")
    return AgentizeOutcome(ws, result, card, backend, toolbox)


def load_env(workspace: str | Path) -> EnvState:
    workspace = Path(workspace)
    path = workspace / META_DIR / "env.json"
    if not path.is_file():
        return EnvState(workspace)
    data = json.loads(path.read_text(encoding="utf-8"))
    return EnvState(workspace, data.get("installed-artifacts", ()), data.get("completed-goals", ()),
                    EnvStatus(data.get("status", "in-progress")))
