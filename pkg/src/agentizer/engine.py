"""Graph-structured agentization of a trajectory and of a whole repository.

A trajectory owns a node DAG, a context and a validation set. Its root node
is planned first; every node's follow-up goals become child nodes, and when
a node yields more than one (or zero) follow-ups each child is delegated to
a nested trajectory of its own. The repository loop runs the root
trajectory, evaluates the repo-level system tests and re-runs the
trajectory (keeping its context) until both gates pass or retries run out.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping

from agentizer import ids
from agentizer.errors import (
    AgentizerError,
    PreconditionError,
    RetriesExhausted,
    SynthesisFailed,
)
from agentizer.graph import ResourceCaps, RunLimits, TaskGraph, topological_order
from agentizer.model import (
    Context,
    ContextItem,
    ContextKind,
    EnvState,
    EnvStatus,
    Goal,
    GoalOrigin,
    Node,
    NodeState,
    Operation,
    transition_state,
)
from agentizer.runlog import RunLog
from agentizer.scheduler import Failure, Scheduler, StepBudget
from agentizer.tools.registry import Toolbox
from agentizer.tools.sandbox import META_DIR
from agentizer.tools.todo import TodoItem, TodoStore
from agentizer.validation import (
    CaseOutcome,
    GateReport,
    ValidationSet,
    evaluate_gate,
    init_validation_set,
    reflect_and_retry,
    union,
)

log = logging.getLogger(__name__)

ROOT_GOAL_TEXT = "To agentize the given repo"
SYSTEM_GOAL_TEXT = "Verify the agentized repo end-to-end"


class TrajectoryStatus(str, Enum):
    OPEN = "open"
    PASSED = "passed"
    FAILED = "failed"


@dataclass
class Trajectory:
    id: str
    goal: Goal
    graph: TaskGraph
    context: Context = field(default_factory=Context)
    validation: ValidationSet | None = None
    parent: str | None = None
    status: TrajectoryStatus = TrajectoryStatus.OPEN
    # Nested trajectories keyed by the id of the node that delegates to them.
    children: dict[str, Trajectory] = field(default_factory=dict)
    gate: GateReport | None = None
    diagnostic: str = ""

    @classmethod
    def create(cls, goal: Goal, context: Context, parent: str | None = None, caps: ResourceCaps | None = None,
               traj_id: str | None = None) -> Trajectory:
        tid = traj_id or ids.derive("traj", goal.id)
        graph = TaskGraph(caps)
        graph.add_node(Node(ids.derive("node", tid, 0), goal, context=context))
        return cls(tid, goal, graph, context, parent=parent)

    @property
    def root_node(self) -> Node:
        return self.graph.nodes[self.graph.root]

    def walk(self) -> Iterator[Trajectory]:
        yield self
        for child in self.children.values():
            yield from child.walk()

    def reopen(self) -> None:
        self.status = TrajectoryStatus.OPEN

    @property
    def passed(self) -> bool:
        return self.status is TrajectoryStatus.PASSED

    def failed_nodes(self) -> list[Node]:
        return [n for t in self.walk() for n in t.graph.nodes.values() if n.state is NodeState.FAILED]

    def shape(self) -> dict[str, Any]:
        """Scheduling-independent structure of the whole trajectory tree."""
        return {
            "id": self.id,
            "status": self.status.value,
            "graph": self.graph.shape(),
            "children": {nid: c.shape() for nid, c in sorted(self.children.items())},
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "goal": self.goal.to_dict(),
            "graph": self.graph.to_dict(),
            "context": self.context.to_dict(),
            "validation": self.validation.to_dict() if self.validation is not None else None,
            "parent": self.parent,
            "status": self.status.value,
            "children": {nid: c.id for nid, c in sorted(self.children.items())},
            "gate": self.gate.to_dict() if self.gate else None,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], load_child=None, caps: ResourceCaps | None = None) -> Trajectory:
        vdata = data.get("validation")
        gate = data.get("gate")
        traj = cls(
            id=data["id"],
            goal=Goal.from_dict(data["goal"]),
            graph=TaskGraph.from_dict(data["graph"], caps),
            context=Context.from_dict(data.get("context", {})),
            validation=ValidationSet.from_dict(vdata) if vdata is not None else None,
            parent=data.get("parent"),
            status=TrajectoryStatus(data.get("status", "open")),
            gate=GateReport.from_dict(gate) if gate else None,
            diagnostic=data.get("diagnostic", ""),
        )
        if load_child is not None:
            for nid, cid in data.get("children", {}).items():
                traj.children[nid] = load_child(cid)
        return traj


def trajectories_dir(workspace: str | Path) -> Path:
    return Path(workspace) / META_DIR / "trajectories"


def save_trajectory(traj: Trajectory, workspace: str | Path) -> None:
    tdir = trajectories_dir(workspace)
    tdir.mkdir(parents=True, exist_ok=True)
    for t in traj.walk():
        text = json.dumps(t.to_dict(), indent=2, sort_keys=True) + "\n"
        tmp = tdir / f"{t.id}.json.tmp"
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(tdir / f"{t.id}.json")


def load_trajectory(workspace: str | Path, traj_id: str, caps: ResourceCaps | None = None) -> Trajectory:
    tdir = trajectories_dir(workspace)

    def load(tid: str) -> Trajectory:
        data = json.loads((tdir / f"{tid}.json").read_text(encoding="utf-8"))
        return Trajectory.from_dict(data, load, caps)

    return load(traj_id)


def _node_failure_report(traj: Trajectory) -> GateReport:
    outcomes = [
        CaseOutcome(f"node:{n.id}", "fail", n.diagnostic or f"node {n.id} ({n.goal.text}) did not complete")
        for t in traj.walk()
        for n in t.graph.nodes.values()
        if n.state is not NodeState.DONE
    ]
    if traj.gate is not None:
        outcomes = list(traj.gate.per_case) + outcomes
    if not outcomes:
        outcomes = [CaseOutcome(f"trajectory:{traj.id}", "fail", traj.diagnostic or "trajectory failed")]
    return GateReport.from_outcomes(outcomes)


class Engine:
    """Shared machinery for one agentization run over one workspace."""

    def __init__(
        self,
        workspace: str | Path,
        planner,
        toolbox: Toolbox,
        *,
        limits: RunLimits | None = None,
        caps: ResourceCaps | None = None,
        env: EnvState | None = None,
        runlog: RunLog | None = None,
        budget: StepBudget | None = None,
    ):
        self.workspace = Path(workspace)
        if not self.workspace.is_dir():
            raise PreconditionError(f"repository directory does not exist: {self.workspace}")
        self.planner = planner
        self.toolbox = toolbox
        self.limits = limits or RunLimits()
        self.caps = caps or ResourceCaps()
        self.env = env or EnvState(self.workspace)
        meta = self.workspace / META_DIR
        self.runlog = runlog if runlog is not None else RunLog(meta / "run.log")
        self.budget = budget or StepBudget(self.limits.max_steps)
        self.todo = TodoStore(meta / "todo.json")

    # -- trajectory level -------------------------------------------------

    def _init_validation(self, traj: Trajectory) -> None:
        if traj.validation is not None:
            return
        try:
            traj.validation = init_validation_set(
                self.workspace, traj.goal, traj.context, self.planner,
                trajectory_id=traj.id, root=traj.parent is None,
            )
        except SynthesisFailed as exc:
            # Leave the set unset: the trajectory cannot pass without one.
            traj.diagnostic = str(exc)
            log.warning("validation synthesis failed for %s: %s", traj.id, exc)

    def run_trajectory(self, traj: Trajectory) -> Trajectory:
        """Run (or resume) every pending node of ``traj``, then evaluate its gate."""
        self._init_validation(traj)
        traj.reopen()
        traj.gate = None
        pending = [n for n in topological_order(traj.graph) if traj.graph.nodes[n].state is NodeState.PENDING]
        scheduler = Scheduler(
            traj.graph,
            execute=lambda node: self._execute(traj, node),
            commit=lambda node, result: self._commit(traj, node, result),
            caps=self.caps,
            budget=self.budget,
            log=self.runlog,
            workspace=self.workspace,
            counts_step=lambda node: node.subtrajectory is None,
        )
        try:
            scheduler.run(pending)
        finally:
            save_trajectory(traj, self.workspace)
        all_done = all(n.state is NodeState.DONE for n in traj.graph.nodes.values())
        if all_done and traj.validation is not None:
            traj.gate = evaluate_gate(traj.validation, self.env, self.toolbox, self.runlog, scope="trajectory")
            traj.status = TrajectoryStatus.PASSED if traj.gate.passed else TrajectoryStatus.FAILED
        else:
            traj.status = TrajectoryStatus.FAILED
        save_trajectory(traj, self.workspace)
        return traj

    def _execute(self, traj: Trajectory, node: Node) -> Any:
        if node.subtrajectory is not None:
            return self.run_trajectory(traj.children[node.id])
        op = self.planner.synthesize_operation(node.goal, node.context, node.id)
        result = self.toolbox.invoke(op, self.env, node.id)
        if not result.ok:
            return op, result, []
        followups = self.planner.derive_followups(op, node.context.merge(result.context_increment), node.goal, node.id)
        return op, result, followups

    def _commit(self, traj: Trajectory, node: Node, result: Any) -> list[str]:
        if isinstance(result, Failure):
            return self._fail(traj, node, f"{getattr(result.error, 'code', 'error')}: {result.error}")
        if isinstance(result, Trajectory):
            return self._commit_delegated(traj, node, result)
        op, tool_result, followups = result
        node.operation = op
        traj.context = traj.context.merge(tool_result.context_increment)
        if not tool_result.ok:
            return self._fail(traj, node, tool_result.diagnostic)
        node.followups = list(followups)
        if not followups:
            vset = (traj.validation or ValidationSet(traj.id)).for_goal(node.goal.id)
            if vset.cases:
                leaf = evaluate_gate(vset, self.env, self.toolbox, self.runlog, scope="leaf")
                if not leaf.passed:
                    node.followups = []
                    return self._fail(traj, node, "leaf validation failed: " + "; ".join(
                        f"{c.case_id}: {c.transcript.strip()[-300:]}" for c in leaf.failing))
        node.context = traj.context
        transition_state(node, NodeState.DONE, self.runlog, {"tool": op.tool, "followups": len(followups)})
        self.env.complete_goal(node.goal.id)
        if followups:
            self.todo.append(node.goal, [TodoItem.from_goal(g) for g in followups], "followups")
        return self._spawn(traj, node, followups)

    def _commit_delegated(self, traj: Trajectory, node: Node, child: Trajectory) -> list[str]:
        # The delegating node mirrors the operation its sub-trajectory root applied.
        node.operation = child.root_node.operation or Operation("think", {"thought": node.goal.text})
        traj.context = traj.context.merge(child.context)
        if not child.passed:
            return self._fail(traj, node, f"sub-trajectory {child.id} failed")
        node.context = traj.context
        transition_state(node, NodeState.DONE, self.runlog, {"trajectory": child.id})
        self.env.complete_goal(node.goal.id)
        return []

    def _fail(self, traj: Trajectory, node: Node, diagnostic: str) -> list[str]:
        node.diagnostic = diagnostic
        node.followups = []
        traj.context = traj.context.merge([ContextItem(ContextKind.COMMAND_OUTPUT, f"{node.id} failed: {diagnostic}"[:8000], node.id)])
        node.context = traj.context
        transition_state(node, NodeState.FAILED, self.runlog, {"diagnostic": diagnostic[:500]})
        return []

    def _spawn(self, traj: Trajectory, node: Node, followups: list[Goal]) -> list[str]:
        created: list[str] = []
        by_text: dict[str, str] = {}
        delegate = len(followups) != 1
        for i, goal in enumerate(followups):
            cid = ids.derive("node", node.id, i)
            child = Node(cid, goal, context=traj.context)
            siblings = [by_text[t] for t in goal.after if t in by_text]
            if siblings:
                traj.graph.add_node(child)
                for sib in siblings:
                    traj.graph.add_edge(sib, cid)
            else:
                traj.graph.add_node(child, parent=node.id)
            by_text[goal.text] = cid
            if delegate:
                sub = Trajectory.create(goal, traj.context, parent=traj.id, caps=self.caps,
                                        traj_id=ids.derive("traj", cid))
                self._init_validation(sub)
                child.subtrajectory = sub.id
                traj.children[cid] = sub
                self.log_created(sub)
            self.runlog.append(cid, "created", {
                "trajectory": traj.id, "goal": goal.text, "parents": traj.graph.predecessors(cid),
                "subtrajectory": child.subtrajectory,
            })
            created.append(cid)
        return created

    def log_created(self, traj: Trajectory) -> None:
        self.runlog.append(traj.root_node.id, "created", {"trajectory": traj.id, "goal": traj.goal.text})

    # -- repository level -------------------------------------------------

    def system_tests(self, traj: Trajectory) -> ValidationSet:
        """V_R: every trajectory set plus planner-proposed repo-level cases."""
        sets = [t.validation for t in traj.walk() if t.validation is not None]
        goal = Goal(ids.derive("goal", traj.id, "system"), SYSTEM_GOAL_TEXT, GoalOrigin.VALIDATION)
        try:
            extra = self.planner.generate_validation(goal, traj.context)
        except AgentizerError:
            extra = []
        sets.append(ValidationSet("system", list(extra)))
        return union(sets, name="repo")


@dataclass
class AgentizeResult:
    trajectory: Trajectory
    env: EnvState
    report: GateReport
    retries: int
    reverified: bool = False


def root_goal(seed: str = "0") -> Goal:
    return Goal(ids.root_goal_id(seed), ROOT_GOAL_TEXT, GoalOrigin.REPO_ROOT)


def _write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _session_path(workspace: Path) -> Path:
    return workspace / META_DIR / "session.json"


def agentize_repository(
    repo: str | Path,
    planner,
    toolbox: Toolbox,
    limits: RunLimits | None = None,
    caps: ResourceCaps | None = None,
    *,
    seed: str = "0",
    runlog: RunLog | None = None,
) -> AgentizeResult:
    """Run the repository loop; raises RetriesExhausted once the retry budget is spent.

    On a workspace that already finished, only the gates are re-verified.
    """
    workspace = Path(repo)
    if not workspace.is_dir():
        raise PreconditionError(f"repository directory does not exist: {workspace}")
    limits = limits or RunLimits()
    engine = Engine(workspace, planner, toolbox, limits=limits, caps=caps, runlog=runlog)
    env = engine.env
    session = _session_path(workspace)

    if session.is_file():
        state = json.loads(session.read_text(encoding="utf-8"))
        if state.get("status") == EnvStatus.FINISHED.value:
            return _reverify(engine, state)

    traj = Trajectory.create(root_goal(seed), Context(), caps=engine.caps)
    engine.log_created(traj)
    retries = 0
    while True:
        engine.run_trajectory(traj)
        if traj.passed:
            vr = engine.system_tests(traj)
            _write_json(workspace / META_DIR / "validation.json", vr.to_dict())
            report = evaluate_gate(vr, env, toolbox, engine.runlog, scope="repo")
        else:
            report = _node_failure_report(traj)
        if traj.passed and report.passed:
            env.mark_finished(report)
            _persist(engine, traj, report, retries)
            return AgentizeResult(traj, env, report, retries)
        decision = reflect_and_retry(traj, report, limits, retries, engine.runlog)
        if not decision.retry:
            env.mark_failed()
            _persist(engine, traj, report, retries)
            raise RetriesExhausted(
                f"agentization failed after {retries} retries: "
                + "; ".join(f"{c.case_id}: {c.transcript.strip()[-200:]}" for c in report.failing[:5]),
                trajectory=traj,
                env=env,
            )
        retries = decision.attempt
        engine.runlog.append(traj.id, "retried", {"scope": "trajectory", "attempt": retries,
                                                 "reset": list(decision.reset_nodes)})
        _persist(engine, traj, report, retries)


def _persist(engine: Engine, traj: Trajectory, report: GateReport, retries: int) -> None:
    meta = engine.workspace / META_DIR
    save_trajectory(traj, engine.workspace)
    _write_json(meta / "env.json", engine.env.to_dict(include_root=False))
    _write_json(meta / "gate.json", report.to_dict())
    _write_json(
        _session_path(engine.workspace),
        {
            "root-trajectory": traj.id,
            "status": engine.env.status.value,
            "retries": retries,
            "max-steps": engine.limits.max_steps,
            "max-retries": engine.limits.max_retries,
            "steps-used": engine.budget.used,
        },
    )
    (meta / "plan.dot").write_text(traj.graph.to_dot(traj.id), encoding="utf-8")
    ledger = getattr(engine.planner, "ledger", None)
    if ledger is not None:
        ledger.write(meta / "usage.json")


def _reverify(engine: Engine, state: Mapping[str, Any]) -> AgentizeResult:
    meta = engine.workspace / META_DIR
    traj = load_trajectory(engine.workspace, state["root-trajectory"], engine.caps)
    env_data = json.loads((meta / "env.json").read_text(encoding="utf-8"))
    env = engine.env
    env.add_artifacts(env_data.get("installed-artifacts", ()))
    for g in env_data.get("completed-goals", ()):
        env.complete_goal(g)
    saved = meta / "validation.json"
    if saved.is_file():
        vr = ValidationSet.from_dict(json.loads(saved.read_text(encoding="utf-8")))
    else:
        vr = union((t.validation for t in traj.walk() if t.validation is not None), name="repo")
    report = evaluate_gate(vr, env, engine.toolbox, engine.runlog, scope="reverify")
    if report.passed:
        env.mark_finished(report)
    else:
        env.mark_failed()
    _write_json(meta / "env.json", env.to_dict(include_root=False))
    _write_json(meta / "gate.json", report.to_dict())
    if not report.passed:
        state = dict(state, status=env.status.value)
        _write_json(_session_path(engine.workspace), state)
        raise RetriesExhausted("re-verification of a finished workspace failed", trajectory=traj, env=env)
    return AgentizeResult(traj, env, report, int(state.get("retries", 0)), reverified=True)


__all__ = [
    "AgentizeResult",
    "Engine",
    "ROOT_GOAL_TEXT",
    "Trajectory",
    "TrajectoryStatus",
    "agentize_repository",
    "load_trajectory",
    "root_goal",
    "save_trajectory",
]
