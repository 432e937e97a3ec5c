"""File download tool with optional checksum verification and resume."""

from __future__ import annotations

import hashlib
import urllib.error
import urllib.request
from pathlib import Path
from typing import Any, Mapping

from agentizer.errors import ChecksumMismatch, NetworkError, PreconditionError
from agentizer.model import ContextItem, ContextKind
from agentizer.tools.registry import ArgSpec, ToolContext, ToolRegistry, ToolResult, ToolSpec
from agentizer.tools.sandbox import SandboxPolicy

CHUNK = 64 * 1024


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def _expected_digest(checksum: str) -> str:
    algo, _, value = checksum.partition(":")
    if not value:
        algo, value = "sha256", checksum
    if algo.lower() != "sha256" or len(value) != 64:
        raise PreconditionError(f"unsupported checksum {checksum!r}; expected sha256:<64 hex>")
    return value.lower()


def file_download(
    url: str,
    dest: str | Path,
    checksum: str | None,
    policy: SandboxPolicy,
    *,
    timeout: float | None = None,
) -> tuple[Path, int]:
    """Fetch ``url`` into ``dest`` (inside the workdir). Returns (path, bytes written).

    A ``<dest>.part`` file left by an interrupted attempt is resumed with a
    Range request; servers that ignore Range get a full restart.
    """
    target = policy.resolve(dest)
    policy.require_network()
    if not url.startswith(("http://", "https://")):
        raise PreconditionError(f"unsupported url scheme: {url}")
    expected = _expected_digest(checksum) if checksum else None
    target.parent.mkdir(parents=True, exist_ok=True)
    part = target.with_name(target.name + ".part")
    offset = part.stat().st_size if part.exists() else 0
    req = urllib.request.Request(url)
    if offset:
        req.add_header("Range", f"bytes={offset}-")
    limit = timeout or policy.wall_clock_limit
    try:
        with urllib.request.urlopen(req, timeout=limit) as resp:
            mode = "ab" if offset and resp.status == 206 else "wb"
            with part.open(mode) as fh:
                for block in iter(lambda: resp.read(CHUNK), b""):
                    fh.write(block)
    except urllib.error.HTTPError as exc:
        if exc.code == 416 and offset:
            pass  # part file already complete
        else:
            raise NetworkError(f"GET {url} failed: HTTP {exc.code}") from exc
    except (urllib.error.URLError, OSError) as exc:
        raise NetworkError(f"GET {url} failed: {exc}") from exc
    if expected is not None:
        actual = sha256_file(part)
        if actual != expected:
            part.unlink(missing_ok=True)
            target.unlink(missing_ok=True)
            raise ChecksumMismatch(f"{url}: expected sha256 {expected}, got {actual}")
    part.replace(target)
    return target, target.stat().st_size


def _handler(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    with ctx.toolbox.locks.hold(ctx.policy.resolve(args["dest"])):
        path, size = file_download(args["url"], args["dest"], args.get("checksum"), ctx.policy)
    digest = sha256_file(path)
    return ToolResult.success(
        [
            ContextItem(ContextKind.COMMAND, f"download {args['url']} -> {ctx.env.relpath(path)}", ctx.node_id),
            ContextItem(ContextKind.ARTIFACT_PATH, str(path), ctx.node_id),
        ],
        artifacts=[path],
        descriptors=[f"download:{ctx.env.relpath(path)}@sha256:{digest}"],
        size=size,
        sha256=digest,
    )


def register(registry: ToolRegistry) -> None:
    registry.register(
        ToolSpec(
            "file-download",
            "Download a dataset or model file into the workspace, verifying an optional sha256.",
            {"url": ArgSpec("string", True), "dest": ArgSpec("string", True), "checksum": ArgSpec("string")},
            category="download",
        ),
        _handler,
    )
