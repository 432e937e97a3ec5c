"""Shared helpers for the test-suite: fixture copies, an in-memory tool, DAG plans."""

from __future__ import annotations

import hashlib
import json
import shutil
from pathlib import Path
from typing import Any, Iterable

from agentizer.engine import agentize_repository, load_trajectory
from agentizer.errors import RetriesExhausted
from agentizer.graph import ResourceCaps, RunLimits
from agentizer.model import ContextItem, ContextKind
from agentizer.planner import ScriptedPlan, ScriptedPlanner
from agentizer.tools import ArgSpec, ToolResult, ToolSpec, default_registry, make_toolbox
from agentizer.tools.sandbox import META_DIR

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
EMPTY_SHA = hashlib.sha256(b"").hexdigest()
WRONG_SHA = "0" * 64


def copy_fixture(name: str, dest: Path) -> Path:
    target = dest / name
    shutil.copytree(FIXTURES / name, target, ignore=shutil.ignore_patterns(META_DIR, "__pycache__"))
    return target


def _mem_put(args, ctx):
    key = args["key"]
    return ToolResult.success([ContextItem(ContextKind.COMMAND_OUTPUT, f"put {key}", ctx.node_id)],
                              descriptors=[f"mem:{key}"])


def mem_registry():
    """Default tools plus ``mem-put``, which only records a descriptor in EnvState."""
    registry = default_registry()
    registry.register(ToolSpec("mem-put", "Record a key in the environment.", {"key": ArgSpec("string", True)},
                               side_effecting=False), _mem_put)
    return registry


def dag_plan(n: int, edges: Iterable[tuple[int, int]], failing: Iterable[int] = ()) -> dict[str, Any]:
    """Root fans out into ``n`` delegated goals; ``edges`` (i < j) become ``after`` dependencies.

    Each goal is gated by a command-free digest case that passes, unless the
    goal is listed in ``failing``.
    """
    preds: dict[int, list[int]] = {j: [] for j in range(n)}
    for i, j in sorted(set(edges)):
        preds[j].append(i)
    failing = set(failing)
    followups = [{"text": f"task {j}", "after": [f"task {i}" for i in preds[j]]} for j in range(n)]
    entries: list[dict[str, Any]] = [
        {"pattern": "To agentize the given repo", "kind": "synthesize-operation",
         "response": {"tool": "mem-put", "arguments": {"key": "root"}, "followups": followups}},
        {"pattern": "To agentize the given repo", "kind": "generate-validation",
         "response": {"cases": [{"input": "", "expected": {"kind": "digest", "sha256": EMPTY_SHA}}]}},
        {"pattern": "Verify the agentized repo end-to-end", "kind": "generate-validation",
         "response": {"cases": [{"input": "", "expected": {"kind": "digest", "sha256": EMPTY_SHA}}]}},
    ]
    for j in range(n):
        entries.append({"pattern": f"task {j}", "kind": "synthesize-operation",
                        "response": {"tool": "mem-put", "arguments": {"key": f"k{j}"}}})
        sha = WRONG_SHA if j in failing else EMPTY_SHA
        entries.append({"pattern": f"task {j}", "kind": "generate-validation",
                        "response": {"cases": [{"input": "", "expected": {"kind": "digest", "sha256": sha}}]}})
    return {"entries": entries}


def run_plan(workspace: Path, plan: dict[str, Any], parallelism: int = 1, max_retries: int = 0,
             max_steps: int = 200) -> dict[str, Any]:
    """Agentize ``workspace`` with ``plan`` and return the comparable end state."""
    workspace.mkdir(parents=True, exist_ok=True)
    planner = ScriptedPlanner(ScriptedPlan.from_data(plan))
    toolbox = make_toolbox(workspace, planner=planner, registry=mem_registry())
    caps = ResourceCaps(parallelism=parallelism)
    try:
        result = agentize_repository(workspace, planner, toolbox, RunLimits(max_steps, max_retries), caps)
        traj, env, finished = result.trajectory, result.env, True
    except RetriesExhausted as exc:
        traj, env, finished = exc.trajectory, exc.env, False
    gate = json.loads((workspace / META_DIR / "gate.json").read_text())
    return {
        "finished": finished,
        "env": env.to_dict(include_root=False),
        "shape": [t.shape() for t in traj.walk()],
        "gate": {"passed": gate["passed"], "outcomes": {c["case-id"]: c["outcome"] for c in gate["per-case"]}},
        "trajectory": traj,
    }


def reload_root(workspace: Path):
    session = json.loads((workspace / META_DIR / "session.json").read_text())
    return load_trajectory(workspace, session["root-trajectory"])


def audit_finished(workspace: Path) -> bool:
    """Check a recorded run: ``finished`` only ever follows a passing repo-level gate.

    Returns whether the run finished, so callers can count them.
    """
    meta = workspace / META_DIR
    env = json.loads((meta / "env.json").read_text())
    gate = json.loads((meta / "gate.json").read_text())
    events = [json.loads(line) for line in (meta / "run.log").read_text().splitlines() if line.strip()]
    repo_gates = [e for e in events if e["event"] == "gate" and e["detail"].get("scope") in ("repo", "reverify")]
    if env["status"] == "finished":
        assert gate["passed"], f"{workspace}: finished with a failing gate"
        assert repo_gates and repo_gates[-1]["detail"]["passed"], f"{workspace}: no passing repo gate logged"
        return True
    return False
