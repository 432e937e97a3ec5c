"""Basic tools: read-file, write-file, exec-script, think, finish."""

from __future__ import annotations

import shlex
from pathlib import Path
from typing import Any, Mapping

from agentizer.errors import PreconditionError, ToolTimeout
from agentizer.model import ContextItem, ContextKind
from agentizer.tools.registry import ArgSpec, ToolContext, ToolRegistry, ToolResult, ToolSpec

MAX_SLICE = 8000
_CODE_SUFFIXES = {".py", ".sh", ".js", ".ts", ".c", ".h", ".cpp", ".rs", ".go", ".java", ".rb"}
_CONFIG_SUFFIXES = {".json", ".yaml", ".yml", ".toml", ".ini", ".cfg", ".conf", ".env"}


def read_file(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    path = ctx.policy.resolve(args["path"])
    if not path.is_file():
        raise PreconditionError(f"no such file: {args['path']}")
    limit = int(args.get("max_bytes") or MAX_SLICE)
    text = path.read_text(encoding="utf-8", errors="replace")[:limit]
    rel = ctx.env.relpath(path)
    if path.suffix in _CODE_SUFFIXES:
        kind = ContextKind.CODE_SLICE
    elif path.suffix in _CONFIG_SUFFIXES:
        kind = ContextKind.CONFIGURATION
    else:
        kind = ContextKind.DOC_SLICE
    body = f"{rel}:\n{text}" if text else f"{rel}: (empty)"
    return ToolResult.success([ContextItem(kind, body, ctx.node_id)], text=text)


def write_file(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    path = ctx.policy.resolve(args["path"])
    content = args["content"]
    with ctx.toolbox.locks.hold(path):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
    items = [ContextItem(ContextKind.ARTIFACT_PATH, str(path), ctx.node_id)]
    if path.suffix in _CONFIG_SUFFIXES and content:
        items.append(ContextItem(ContextKind.CONFIGURATION, f"{ctx.env.relpath(path)}:\n{content[:MAX_SLICE]}", ctx.node_id))
    return ToolResult.success(items, artifacts=[path])


def _script_command(script: Path, extra: list[str]) -> list[str]:
    if script.suffix == ".py":
        head = ["python"]
    elif script.suffix == ".sh":
        head = ["bash"]
    else:
        head = []
    return head + [str(script)] + [str(a) for a in extra]


def exec_script(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    command = args.get("command")
    script = args.get("script")
    if bool(command) == bool(script):
        raise PreconditionError("exec-script needs exactly one of 'command' or 'script'")
    if script:
        spath = ctx.policy.resolve(script)
        if not spath.is_file():
            raise PreconditionError(f"no such script: {script}")
        command = " ".join(shlex.quote(p) for p in _script_command(spath, list(args.get("args") or [])))
    produces = [ctx.policy.resolve(p) for p in args.get("produces") or []]
    cwd = args.get("cwd")
    result = ctx.toolbox.run_command(command, cwd=cwd, timeout=args.get("timeout"))
    _store_transcript(ctx, result.transcript())
    items = [ContextItem(ContextKind.COMMAND, result.command, ctx.node_id)]
    if result.stdout.strip() or result.stderr.strip():
        items.append(ContextItem(ContextKind.COMMAND_OUTPUT, result.transcript(MAX_SLICE), ctx.node_id))
    if result.timed_out:
        raise ToolTimeout(
            f"command exceeded wall-clock limit after {result.duration:.2f}s: {result.command}"
        )
    if result.exit_code != 0:
        return ToolResult.failure(result.transcript(), "tool-failure", items, exit_code=result.exit_code)
    for p in produces:
        if p.exists():
            items.append(ContextItem(ContextKind.ARTIFACT_PATH, str(p), ctx.node_id))
    return ToolResult.success(
        items,
        artifacts=produces,
        exit_code=result.exit_code,
        stdout=result.stdout,
        stderr=result.stderr,
    )


def _store_transcript(ctx: ToolContext, text: str) -> None:
    tdir = ctx.toolbox.meta / "transcripts"
    tdir.mkdir(parents=True, exist_ok=True)
    name = ctx.node_id or "adhoc"
    target = tdir / f"{name}.txt"
    with ctx.toolbox.locks.hold(target), target.open("a", encoding="utf-8") as fh:
        fh.write(text + "\n")


def think(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    thought = args.get("thought") or "(no thought)"
    return ToolResult.success([ContextItem(ContextKind.DOC_SLICE, f"thought: {thought}", ctx.node_id)])


def finish(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    summary = args.get("summary") or "task complete"
    return ToolResult.success([ContextItem(ContextKind.DOC_SLICE, f"finished: {summary}", ctx.node_id)])


def register(registry: ToolRegistry) -> None:
    registry.register(
        ToolSpec(
            "read-file",
            "Read a text file inside the workspace into context.",
            {"path": ArgSpec("string", True), "max_bytes": ArgSpec("integer")},
            side_effecting=False,
        ),
        read_file,
    )
    registry.register(
        ToolSpec(
            "write-file",
            "Write text content to a file inside the workspace.",
            {"path": ArgSpec("string", True), "content": ArgSpec("string", True)},
        ),
        write_file,
    )
    registry.register(
        ToolSpec(
            "exec-script",
            "Run a shell command or a workspace script under the sandbox policy.",
            {
                "command": ArgSpec("string"),
                "script": ArgSpec("string"),
                "args": ArgSpec("array"),
                "cwd": ArgSpec("string"),
                "timeout": ArgSpec("number"),
                "produces": ArgSpec("array"),
            },
        ),
        exec_script,
    )
    registry.register(
        ToolSpec("think", "Record reasoning into context.", {"thought": ArgSpec("string")}, side_effecting=False),
        think,
    )
    registry.register(
        ToolSpec("finish", "Declare the current task complete.", {"summary": ArgSpec("string")}, side_effecting=False),
        finish,
    )
