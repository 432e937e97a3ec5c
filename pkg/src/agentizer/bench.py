"""Desk-scale benchmark harness: execution completion and task pass rates."""

from __future__ import annotations

import json
import logging
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from agentizer.errors import AgentizerError, MalformedSuite, PreconditionError
from agentizer.graph import RunLimits
from agentizer.validation import Matcher, MatcherKind

log = logging.getLogger(__name__)


class TaskResult(str, Enum):
    NOT_RUN = "not-run"
    EXECUTED = "executed"
    PASSED = "passed"
    FAILED_EXECUTION = "failed-execution"
    FAILED_QUALITY = "failed-quality"

    @property
    def executed(self) -> bool:
        return self in (TaskResult.EXECUTED, TaskResult.PASSED, TaskResult.FAILED_QUALITY)


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    repo: str
    query: str
    matcher: Matcher
    result: TaskResult = TaskResult.NOT_RUN
    tokens: tuple[int, int] = (0, 0)
    diagnostic: str = ""

    def __post_init__(self):
        object.__setattr__(self, "result", TaskResult(self.result))
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def to_dict(self) -> dict[str, Any]:
        return {
            "task-id": self.task_id,
            "repo": self.repo,
            "query": self.query,
            "matcher": self.matcher.to_dict(),
            "result": self.result.value,
            "tokens": {"input": self.tokens[0], "output": self.tokens[1]},
            "diagnostic": self.diagnostic,
        }


def _percent(count: int, total: int) -> float:
    """100 * count / total, rounded half-up to two decimals using integers only."""
    hundredths = (20000 * count + total) // (2 * total)
    return hundredths / 100


def _checked(tasks: Sequence[TaskRecord]) -> Sequence[TaskRecord]:
    if not tasks:
        raise MalformedSuite("cannot compute a rate over an empty task list")
    unrun = [t.task_id for t in tasks if t.result is TaskResult.NOT_RUN]
    if unrun:
        raise PreconditionError(f"tasks without a result: {', '.join(unrun[:5])}")
    return tasks


def compute_ecr(tasks: Sequence[TaskRecord]) -> float:
    tasks = _checked(tasks)
    return _percent(sum(t.result.executed for t in tasks), len(tasks))


def compute_tpr(tasks: Sequence[TaskRecord]) -> float:
    tasks = _checked(tasks)
    return _percent(sum(t.result is TaskResult.PASSED for t in tasks), len(tasks))


@dataclass
class BenchReport:
    tasks: list[TaskRecord] = field(default_factory=list)

    @property
    def ecr(self) -> float:
        return compute_ecr(self.tasks)

    @property
    def tpr(self) -> float:
        return compute_tpr(self.tasks)

    @property
    def total_tokens(self) -> tuple[int, int]:
        return (sum(t.tokens[0] for t in self.tasks), sum(t.tokens[1] for t in self.tasks))

    def to_dict(self) -> dict[str, Any]:
        tin, tout = self.total_tokens
        return {
            "tasks": [t.to_dict() for t in self.tasks],
            "ecr": self.ecr,
            "tpr": self.tpr,
            "total-tokens": {"input": tin, "output": tout},
        }

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    def table(self) -> str:
        rows = [("task", "repo", "result", "tokens in/out")]
        rows += [(t.task_id, t.repo, t.result.value, f"{t.tokens[0]}/{t.tokens[1]}") for t in self.tasks]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        tin, tout = self.total_tokens
        lines.append("")
        lines.append(f"ECR {self.ecr:.2f}%  TPR {self.tpr:.2f}%  input tokens {tin / 1000:.1f}k  output tokens {tout}")
        return "\n".join(lines)


@dataclass(frozen=True)
class SuiteTask:
    id: str
    repo: Path
    query: str
    input: Mapping[str, Any]
    output: str
    matcher: Matcher
    skill: str | None = None
    output_field: str | None = None


def load_suite(path: str | Path) -> list[SuiteTask]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedSuite(f"cannot read suite {path}: {exc}") from exc
    items = data.get("tasks") if isinstance(data, Mapping) else None
    if not isinstance(items, list) or not items:
        raise MalformedSuite(f"suite {path} lists no tasks")
    tasks, seen = [], set()
    for i, item in enumerate(items):
        try:
            task = SuiteTask(
                id=str(item["id"]),
                repo=(path.parent / item["repo"]).resolve(),
                query=str(item["query"]),
                input=dict(item.get("input") or {}),
                output=str(item["output"]),
                matcher=Matcher.from_dict(item["matcher"]),
                skill=item.get("skill"),
                output_field=item.get("output-field"),
            )
        except (KeyError, TypeError, ValueError, AgentizerError) as exc:
            raise MalformedSuite(f"task #{i} in {path} is malformed: {exc}") from exc
        if task.id in seen:
            raise MalformedSuite(f"duplicate task id {task.id!r}")
        if Path(task.output).is_absolute() or ".." in Path(task.output).parts:
            raise MalformedSuite(f"task {task.id}: output must be a relative path inside the output directory")
        seen.add(task.id)
        tasks.append(task)
    return tasks


def _resolve_input(value: Any, repo: Path, workspace: Path) -> Any:
    """Repository-relative file inputs are sent as data URLs so the agent owns its copy."""
    from agentizer.a2a.router import to_data_url

    if isinstance(value, str) and not value.startswith(("http://", "https://", "data:")):
        for base in (workspace, repo):
            candidate = base / value
            if candidate.is_file():
                return to_data_url(candidate)
    return value


def _write_output(response, task: SuiteTask, target: Path) -> None:
    from agentizer.a2a.service import fetch_url

    out = dict(response.output)
    if not out:
        return
    name = task.output_field or sorted(out)[0]
    value = out.get(name)
    if value is None:
        return
    target.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(value, str) and value in response.artifacts:
        data, _ = fetch_url(value)
        target.write_bytes(data)
    else:
        text = value if isinstance(value, str) else json.dumps(value)
        target.write_text(text + "\n" if text else "", encoding="utf-8")


def judge(task: SuiteTask, out_dir: Path, completed: bool) -> tuple[TaskResult, str]:
    """Existence and non-emptiness decide execution; the matcher decides quality.

    Matcher paths are relative to the output directory and default to the
    task's output file.
    """
    target = out_dir / task.output
    if not completed or not target.is_file() or target.stat().st_size == 0:
        return TaskResult.FAILED_EXECUTION, f"{task.output}: missing or empty"
    matcher = task.matcher
    if matcher.kind in (MatcherKind.FILE_EXISTS_NONEMPTY, MatcherKind.DIGEST) and not matcher.path:
        matcher = replace(matcher, path=task.output)
    text = target.read_text(encoding="utf-8", errors="replace")
    ok, detail = matcher.check(0, text, out_dir)
    return (TaskResult.PASSED if ok else TaskResult.FAILED_QUALITY), detail


def _run_task(task: SuiteTask, card, outcome, out_dir: Path, send) -> TaskRecord:
    from agentizer.a2a.router import heuristic_plan
    from agentizer.a2a.wire import A2ARequest

    record = TaskRecord(task.id, task.repo.name, task.query, task.matcher)
    inputs = {k: _resolve_input(v, task.repo, outcome.workspace) for k, v in task.input.items()}
    skill = task.skill
    try:
        if skill is None:
            step = heuristic_plan(task.query, [card], inputs).steps[0]
            skill = step.skill
    except AgentizerError as exc:
        return replace(record, result=TaskResult.FAILED_EXECUTION, diagnostic=str(exc))
    response = send(card.endpoint, A2ARequest(f"bench.{task.id}", skill, inputs, task.query))
    target = out_dir / task.output
    try:
        _write_output(response, task, target)
    except (OSError, AgentizerError) as exc:
        return replace(record, result=TaskResult.FAILED_EXECUTION, diagnostic=str(exc), tokens=response.usage)
    result, detail = judge(task, out_dir, response.ok)
    return replace(record, result=result, tokens=response.usage,
                   diagnostic=detail if response.ok else response.diagnostic[-500:])


def run_suite(
    suite: str | Path,
    *,
    planner: str = "scripted",
    work_dir: str | Path | None = None,
    limits: RunLimits | None = None,
    parallel: int = 1,
    seed: str = "0",
) -> BenchReport:
    """Agentize each referenced repository once, serve it, and run its tasks through the agent."""
    from agentizer.a2a.service import AgentService, send_task
    from agentizer.pipeline import agentize

    tasks = load_suite(suite)
    if parallel > 1 and planner != "scripted":
        raise PreconditionError("--parallel is only permitted with the scripted planner")
    work = Path(work_dir) if work_dir else Path(tempfile.mkdtemp(prefix="agentizer-bench-"))
    out_dir = work / "outputs"
    out_dir.mkdir(parents=True, exist_ok=True)
    by_repo: dict[Path, list[SuiteTask]] = {}
    for t in tasks:
        by_repo.setdefault(t.repo, []).append(t)

    records: dict[str, TaskRecord] = {}
    for repo, group in by_repo.items():
        try:
            outcome = agentize(repo, workspace=work / "workspaces" / repo.name, planner=planner,
                               limits=limits, seed=seed)
        except AgentizerError as exc:
            log.warning("agentizing %s failed: %s", repo, exc)
            for t in group:
                records[t.id] = TaskRecord(t.id, repo.name, t.query, t.matcher,
                                           TaskResult.FAILED_EXECUTION, diagnostic=f"agentize: {exc}")
            continue
        setup_tokens = outcome.planner.ledger.totals
        with AgentService(outcome.card, outcome.result.env, outcome.toolbox) as service:
            card = service.card
            if parallel > 1:
                with ThreadPoolExecutor(max_workers=parallel) as pool:
                    done = list(pool.map(lambda t: _run_task(t, card, outcome, out_dir, send_task), group))
            else:
                done = [_run_task(t, card, outcome, out_dir, send_task) for t in group]
        # agentization cost is charged to the first task of each repository
        first = done[0]
        done[0] = replace(first, tokens=(first.tokens[0] + setup_tokens[0], first.tokens[1] + setup_tokens[1]))
        records.update((r.task_id, r) for r in done)
    return BenchReport([records[t.id] for t in tasks])

