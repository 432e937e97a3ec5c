"""Dependency management: installs into ``.agentizer/envdir`` only."""

from __future__ import annotations

import re
import shlex
import shutil
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from agentizer.errors import (
    InstallerMissing,
    PreconditionError,
    ResolverConflict,
    ToolError,
    ToolTimeout,
)
from agentizer.model import ContextItem, ContextKind
from agentizer.tools.registry import ArgSpec, ToolContext, ToolRegistry, ToolResult, ToolSpec
from agentizer.tools.sandbox import Network, SandboxPolicy, ensure_envdir, run_command

_PIN = re.compile(r"^\s*([A-Za-z0-9][A-Za-z0-9._-]*)\s*(?:\[[^\]]*\])?\s*==\s*([^\s;#]+)")
_CONFLICT_MARKERS = ("ResolutionImpossible", "conflicting dependencies", "Double requirement", "Cannot install")


class ManifestKind(str, Enum):
    REQUIREMENTS_FILE = "requirements-file"
    CONDA_ENV = "conda-env"
    LOCKFILE = "lockfile"
    CUSTOM_SCRIPT = "custom-script"


def detect_kind(manifest: Path) -> ManifestKind:
    name = manifest.name.lower()
    if name in ("environment.yml", "environment.yaml") or name.endswith((".conda.yml", ".conda.yaml")):
        return ManifestKind.CONDA_ENV
    if name.endswith(".lock") or name in ("pipfile.lock", "requirements.lock"):
        return ManifestKind.LOCKFILE
    if name.endswith(".sh"):
        return ManifestKind.CUSTOM_SCRIPT
    if name.endswith(".txt") or name.endswith(".in"):
        return ManifestKind.REQUIREMENTS_FILE
    raise PreconditionError(f"cannot detect manifest kind of {manifest.name}; declare it explicitly")


def normalize_name(name: str) -> str:
    return re.sub(r"[-_.]+", "-", name).lower()


def conflicting_pins(text: str) -> list[tuple[str, str]]:
    """Return pairs of requirement lines pinning the same project to different versions."""
    seen: dict[str, str] = {}
    conflicts = []
    for line in text.splitlines():
        m = _PIN.match(line)
        if not m:
            continue
        key = normalize_name(m.group(1))
        pin = f"{m.group(1)}=={m.group(2)}"
        if key in seen and normalize_name(seen[key]) != normalize_name(pin):
            conflicts.append((seen[key], pin))
        seen.setdefault(key, pin)
    return conflicts


def resolved_packages(site: Path) -> list[str]:
    out = []
    for info in sorted(site.glob("*.dist-info")):
        stem = info.name[: -len(".dist-info")]
        name, _, version = stem.rpartition("-")
        if name:
            out.append(f"{normalize_name(name)}=={version}")
    return out


def install_dependencies(
    manifest: str | Path,
    kind: str | ManifestKind | None,
    policy: SandboxPolicy,
    *,
    find_links: Path | None = None,
    timeout: float | None = None,
) -> dict[str, Any]:
    path = policy.resolve(manifest)
    if not path.is_file():
        raise PreconditionError(f"manifest not found: {manifest}")
    mkind = ManifestKind(kind) if kind else detect_kind(path)
    envdir = ensure_envdir(policy)
    site = envdir / "site"
    text = path.read_text(encoding="utf-8", errors="replace")

    if mkind is ManifestKind.CONDA_ENV:
        exe = shutil.which("mamba") or shutil.which("conda")
        if exe is None:
            raise InstallerMissing("conda-env manifest requires conda or mamba on PATH")
        cmd = [exe, "env", "create", "--yes", "-p", str(envdir / "conda"), "-f", str(path)]
    elif mkind is ManifestKind.CUSTOM_SCRIPT:
        cmd = ["bash", str(path)]
    else:
        if mkind is ManifestKind.LOCKFILE and path.name.lower() in ("poetry.lock", "pipfile.lock"):
            raise InstallerMissing(f"{path.name} needs its own installer; export it to requirements format")
        cmd = [
            sys.executable, "-m", "pip", "install",
            "--disable-pip-version-check", "--no-input", "--no-warn-script-location",
            "--target", str(site), "-r", str(path),
        ]
        if mkind is ManifestKind.LOCKFILE:
            cmd.append("--no-deps")
        if find_links is not None:
            cmd += ["--no-index", "--find-links", str(find_links)]
        elif policy.network is Network.DENIED:
            cmd.append("--no-index")
    result = run_command(
        " ".join(shlex.quote(c) for c in cmd), policy, timeout=timeout, extra_env={"PIP_NO_CACHE_DIR": "1"}
    )
    if result.timed_out:
        raise ToolTimeout(f"installation exceeded {policy.wall_clock_limit}s")
    if result.exit_code != 0:
        output = result.stdout + result.stderr
        pins = conflicting_pins(text)
        if pins or any(marker in output for marker in _CONFLICT_MARKERS):
            named = "; ".join(f"{a} vs {b}" for a, b in pins) or "see installer output"
            raise ResolverConflict(f"conflicting requirements ({named})\n{result.transcript()}")
        raise ToolError(f"installation failed\n{result.transcript()}")
    return {
        "kind": mkind.value,
        "packages": resolved_packages(site),
        "transcript": result.transcript(),
        "command": result.command,
    }


def _handler(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    info = install_dependencies(
        args["manifest"], args.get("kind"), ctx.policy, find_links=ctx.toolbox.find_links
    )
    packages = info["packages"]
    items = [
        ContextItem(ContextKind.COMMAND, info["command"], ctx.node_id),
        ContextItem(ContextKind.COMMAND_OUTPUT, info["transcript"][-4000:], ctx.node_id),
        ContextItem(
            ContextKind.CONFIGURATION,
            "resolved packages: " + (", ".join(packages) if packages else "(none)"),
            ctx.node_id,
        ),
    ]
    return ToolResult.success(
        items,
        descriptors=[f"package:{p}" for p in packages],
        packages=packages,
        kind=info["kind"],
    )


def register(registry: ToolRegistry) -> None:
    registry.register(
        ToolSpec(
            "install-deps",
            "Install repository dependencies (requirements file, conda env, lockfile or custom script) "
            "into the isolated per-repository environment directory.",
            {"manifest": ArgSpec("string", True), "kind": ArgSpec("string")},
            category="dependency",
        ),
        _handler,
    )
