"""Validation sets, gate evaluation and the reflect-and-retry policy."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from agentizer import ids
from agentizer.errors import NoPlan, PreconditionError, SynthesisFailed
from agentizer.model import Context, ContextItem, ContextKind, Goal, GoalOrigin, NodeState, transition_state
from agentizer.runlog import RunLog, utcnow

log = logging.getLogger(__name__)

DEFAULT_CASE_CAP = 8
_README_NAMES = ("README.md", "README.rst", "README.txt", "README", "readme.md")
_FENCE = re.compile(r"^```([^\n]*)\n(.*?)^```", re.M | re.S)


class MatcherKind(str, Enum):
    EXACT_TEXT = "exact-text"
    FILE_EXISTS_NONEMPTY = "file-exists-nonempty"
    EXIT_CODE = "exit-code"
    DIGEST = "digest"


class Provenance(str, Enum):
    REPO_TEST_SUITE = "repo-test-suite"
    REPO_EXAMPLE = "repo-example"
    SYNTHESIZED = "synthesized"


@dataclass(frozen=True)
class Matcher:
    kind: MatcherKind
    text: str = ""
    path: str = ""
    code: int = 0
    sha256: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", MatcherKind(self.kind))
        if self.kind is MatcherKind.FILE_EXISTS_NONEMPTY and not self.path:
            raise PreconditionError("file-exists-nonempty matcher needs a path")
        if self.kind is MatcherKind.DIGEST and not re.fullmatch(r"[0-9a-f]{64}", self.sha256):
            raise PreconditionError("digest matcher needs a 64-hex sha256")
        if not isinstance(self.code, int) or isinstance(self.code, bool):
            raise PreconditionError("exit-code matcher needs an integer code")

    def check(self, exit_code: int, stdout: str, workspace: Path) -> tuple[bool, str]:
        if self.kind is MatcherKind.EXIT_CODE:
            return exit_code == self.code, f"exit {exit_code}, expected {self.code}"
        if self.kind is MatcherKind.EXACT_TEXT:
            got = stdout.rstrip("\n")
            return got == self.text.rstrip("\n"), f"stdout {got[:200]!r}, expected {self.text[:200]!r}"
        target = _inside(workspace, self.path) if self.path else None
        if self.kind is MatcherKind.FILE_EXISTS_NONEMPTY:
            ok = target is not None and target.is_file() and target.stat().st_size > 0
            return ok, f"{self.path}: {'present' if ok else 'missing or empty'}"
        if target is not None:
            if not target.is_file():
                return False, f"{self.path}: missing"
            digest = hashlib.sha256(target.read_bytes()).hexdigest()
        else:
            digest = hashlib.sha256(stdout.encode()).hexdigest()
        return digest == self.sha256, f"sha256 {digest}, expected {self.sha256}"

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"kind": self.kind.value}
        if self.kind is MatcherKind.EXACT_TEXT:
            data["text"] = self.text
        if self.kind is MatcherKind.EXIT_CODE:
            data["code"] = self.code
        if self.kind is MatcherKind.DIGEST:
            data["sha256"] = self.sha256
        if self.path:
            data["path"] = self.path
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Matcher:
        return cls(
            kind=MatcherKind(data["kind"]),
            text=data.get("text", ""),
            path=data.get("path", ""),
            code=int(data.get("code", 0)),
            sha256=data.get("sha256", ""),
        )


def _inside(workspace: Path, rel: str) -> Path | None:
    target = (workspace / rel).resolve()
    root = workspace.resolve()
    if target != root and root not in target.parents:
        return None
    return target


@dataclass(frozen=True)
class ValidationCase:
    id: str
    input: str
    expected: Matcher
    provenance: Provenance = Provenance.SYNTHESIZED
    gates: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if not self.id:
            raise PreconditionError("validation case needs an id")
        if self.provenance is Provenance.SYNTHESIZED and not self.gates:
            raise PreconditionError(f"synthesized case {self.id} must name the goal it gates")
        if not self.input and self.expected.kind in (MatcherKind.EXACT_TEXT, MatcherKind.EXIT_CODE):
            raise PreconditionError(f"case {self.id}: {self.expected.kind.value} matcher needs an input command")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "input": self.input,
            "expected": self.expected.to_dict(),
            "provenance": self.provenance.value,
            "gates": self.gates,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ValidationCase:
        return cls(
            id=data["id"],
            input=data.get("input", ""),
            expected=Matcher.from_dict(data["expected"]),
            provenance=Provenance(data.get("provenance", "synthesized")),
            gates=data.get("gates"),
        )


@dataclass
class ValidationSet:
    trajectory: str
    cases: list[ValidationCase] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.cases)

    def for_goal(self, goal_id: str) -> ValidationSet:
        return ValidationSet(self.trajectory, [c for c in self.cases if c.gates == goal_id])

    def to_dict(self) -> dict[str, Any]:
        return {"trajectory": self.trajectory, "cases": [c.to_dict() for c in self.cases]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ValidationSet:
        return cls(data.get("trajectory", ""), [ValidationCase.from_dict(c) for c in data.get("cases", ())])


def union(sets: Iterable[ValidationSet], name: str = "repo") -> ValidationSet:
    """V_R: the union of per-trajectory sets, deduplicated by case id (first wins)."""
    seen: dict[str, ValidationCase] = {}
    for vset in sets:
        for case in vset.cases:
            seen.setdefault(case.id, case)
    return ValidationSet(name, list(seen.values()))


@dataclass(frozen=True)
class CaseOutcome:
    case_id: str
    outcome: str
    transcript: str

    @property
    def passed(self) -> bool:
        return self.outcome == "pass"

    def to_dict(self) -> dict[str, Any]:
        return {"case-id": self.case_id, "outcome": self.outcome, "transcript": self.transcript}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CaseOutcome:
        return cls(data["case-id"], data["outcome"], data.get("transcript", ""))


@dataclass(frozen=True)
class GateReport:
    passed: bool
    per_case: tuple[CaseOutcome, ...] = ()
    evaluated_at: str = field(default_factory=utcnow)

    def __post_init__(self):
        object.__setattr__(self, "per_case", tuple(self.per_case))
        if self.passed != all(c.passed for c in self.per_case):
            raise PreconditionError("gate report 'passed' must equal the conjunction of case outcomes")

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[CaseOutcome]) -> GateReport:
        outcomes = tuple(outcomes)
        return cls(all(o.passed for o in outcomes), outcomes)

    @property
    def failing(self) -> list[CaseOutcome]:
        return [c for c in self.per_case if not c.passed]

    def outcomes(self) -> dict[str, str]:
        return {c.case_id: c.outcome for c in self.per_case}

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "per-case": [c.to_dict() for c in self.per_case],
            "evaluated-at": self.evaluated_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> GateReport:
        return cls(
            bool(data["passed"]),
            tuple(CaseOutcome.from_dict(c) for c in data.get("per-case", ())),
            data.get("evaluated-at", utcnow()),
        )


def evaluate_case(case: ValidationCase, toolbox) -> CaseOutcome:
    workspace = toolbox.workspace
    if case.input:
        result = toolbox.run_command(case.input)
        code, stdout, transcript = result.exit_code, result.stdout, result.transcript()
        if result.timed_out:
            return CaseOutcome(case.id, "fail", transcript + "\n[timeout]")
    else:
        code, stdout, transcript = 0, "", "(no command)"
    ok, reason = case.expected.check(code, stdout, workspace)
    return CaseOutcome(case.id, "pass" if ok else "fail", f"{transcript}\n{reason}")


def evaluate_gate(vset: ValidationSet, env, toolbox, runlog: RunLog | None = None, scope: str = "trajectory") -> GateReport:
    """Run every case serially; ``passed`` is the conjunction of case outcomes."""
    if not vset.cases:
        log.warning("validation set for %s is empty; gate passes vacuously", vset.trajectory or "(anonymous)")
    report = GateReport.from_outcomes(evaluate_case(c, toolbox) for c in vset.cases)
    if runlog is not None:
        runlog.append(
            vset.trajectory or "repo",
            "gate",
            {"scope": scope, "passed": report.passed, "outcomes": report.outcomes()},
        )
    return report


def _readme(repo: Path) -> Path | None:
    for name in _README_NAMES:
        p = repo / name
        if p.is_file():
            return p
    return None


def _has_pytest_config(repo: Path) -> bool:
    if (repo / "pytest.ini").is_file() or (repo / "conftest.py").is_file():
        return True
    pyproject = repo / "pyproject.toml"
    if pyproject.is_file() and "[tool.pytest" in pyproject.read_text(errors="replace"):
        return True
    setup_cfg = repo / "setup.cfg"
    if setup_cfg.is_file():
        parser = configparser.ConfigParser()
        try:
            parser.read(setup_cfg)
        except configparser.Error:
            return False
        if parser.has_section("tool:pytest"):
            return True
    for tdir in ("tests", "test"):
        d = repo / tdir
        if d.is_dir() and any(d.rglob("test_*.py")):
            return True
    return False


def discover_repo_tests(repo: str | Path) -> list[ValidationCase]:
    """Conventional test runners first, then README fences marked as examples."""
    repo = Path(repo)
    cases: list[ValidationCase] = []
    if _has_pytest_config(repo):
        cases.append(
            ValidationCase(
                ids.derive("case", "repo-test-suite", "pytest"),
                "python -m pytest -q -p no:cacheprovider",
                Matcher(MatcherKind.EXIT_CODE, code=0),
                Provenance.REPO_TEST_SUITE,
            )
        )
    pkg = repo / "package.json"
    if pkg.is_file():
        try:
            scripts = json.loads(pkg.read_text()).get("scripts", {})
        except (json.JSONDecodeError, AttributeError):
            scripts = {}
        if "test" in scripts:
            cases.append(
                ValidationCase(
                    ids.derive("case", "repo-test-suite", "npm"),
                    "npm test --silent",
                    Matcher(MatcherKind.EXIT_CODE, code=0),
                    Provenance.REPO_TEST_SUITE,
                )
            )
    makefile = repo / "Makefile"
    if makefile.is_file() and re.search(r"^test\s*:", makefile.read_text(errors="replace"), re.M):
        cases.append(
            ValidationCase(
                ids.derive("case", "repo-test-suite", "make"),
                "make test",
                Matcher(MatcherKind.EXIT_CODE, code=0),
                Provenance.REPO_TEST_SUITE,
            )
        )
    readme = _readme(repo)
    if readme is not None:
        text = readme.read_text(encoding="utf-8", errors="replace")
        for n, m in enumerate(_FENCE.finditer(text)):
            info, body = m.group(1).strip().lower(), m.group(2).strip()
            if "example" not in info.split() or not body:
                continue
            command = "\n".join(line[2:] if line.startswith("$ ") else line for line in body.splitlines())
            cases.append(
                ValidationCase(
                    ids.derive("case", "repo-example", f"{readme.name}:{n}"),
                    command,
                    Matcher(MatcherKind.EXIT_CODE, code=0),
                    Provenance.REPO_EXAMPLE,
                )
            )
    return cases


def _primary_output(repo: Path) -> str | None:
    readme = _readme(repo)
    if readme is not None:
        return readme.name
    for p in sorted(repo.iterdir()):
        if p.is_file() and not p.name.startswith("."):
            return p.name
    return None


def cases_from_templates(templates: Iterable[Mapping[str, Any]], goal: Goal) -> list[ValidationCase]:
    out = []
    for n, tpl in enumerate(templates):
        expected = tpl.get("expected") or {"kind": "exit-code", "code": 0}
        out.append(
            ValidationCase(
                tpl.get("id") or ids.derive("case", goal.id, n),
                tpl.get("input", ""),
                Matcher.from_dict(expected),
                Provenance(tpl.get("provenance", "synthesized")),
                tpl.get("gates") or goal.id,
            )
        )
    return out


def init_validation_set(
    repo: str | Path,
    goal: Goal,
    context: Context,
    planner,
    *,
    trajectory_id: str = "",
    root: bool | None = None,
    cap: int = DEFAULT_CASE_CAP,
) -> ValidationSet:
    """Build V_tau: discovered repo tests and examples for the root, planner synthesis otherwise."""
    repo = Path(repo)
    if not repo.is_dir() or not os.access(repo, os.R_OK | os.X_OK):
        raise PreconditionError(f"repository not readable: {repo}")
    is_root = goal.origin is GoalOrigin.REPO_ROOT if root is None else root
    if is_root:
        discovered = discover_repo_tests(repo)
        if discovered:
            return ValidationSet(trajectory_id, discovered[:cap])
    try:
        cases = planner.generate_validation(goal, context) if planner is not None else None
    except NoPlan:
        cases = None
    if cases:
        return ValidationSet(trajectory_id, list(cases)[:cap])
    if not is_root:
        return ValidationSet(trajectory_id, [])
    primary = _primary_output(repo)
    if primary is None:
        raise SynthesisFailed(f"no tests, examples or planner cases for {repo}")
    return ValidationSet(
        trajectory_id,
        [
            ValidationCase(
                ids.derive("case", goal.id, "primary-output"),
                "",
                Matcher(MatcherKind.FILE_EXISTS_NONEMPTY, path=primary),
                Provenance.SYNTHESIZED,
                goal.id,
            )
        ],
    )


@dataclass(frozen=True)
class RetryDecision:
    action: str  # "retry" or "give-up"
    attempt: int
    report: GateReport
    reset_nodes: tuple[str, ...] = ()

    @property
    def retry(self) -> bool:
        return self.action == "retry"


def reflect_and_retry(traj, report: GateReport, limits, retries_used: int = 0, runlog: RunLog | None = None) -> RetryDecision:
    """Decide whether a failed trajectory is re-run.

    On retry the failing transcripts join the trajectory context and every
    failed node in the trajectory tree goes back to pending (its operation is
    cleared, its accumulated context kept).
    """
    if report.passed:
        raise PreconditionError("reflect_and_retry called with a passing report")
    if retries_used >= limits.max_retries:
        return RetryDecision("give-up", retries_used, report)
    transcripts = [
        ContextItem(ContextKind.COMMAND_OUTPUT, f"validation {c.case_id} failed:\n{c.transcript}")
        for c in report.failing
        if c.transcript
    ]
    reset = []
    for t in traj.walk():
        if t is traj:
            t.context = t.context.merge(transcripts)
        for node in t.graph.nodes.values():
            if node.state is NodeState.FAILED:
                transition_state(node, NodeState.PENDING, runlog, {"scope": "node", "attempt": retries_used + 1})
                reset.append(node.id)
        t.reopen()
    return RetryDecision("retry", retries_used + 1, report, tuple(reset))
