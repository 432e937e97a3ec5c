"""Path confinement and time-limited command execution."""

from __future__ import annotations

import os
import signal
import subprocess
import sys
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from agentizer.errors import SandboxViolation

META_DIR = ".agentizer"

DEFAULT_ENV_ALLOWLIST = ("PATH", "LANG", "LC_ALL", "LC_CTYPE", "TERM", "SYSTEMROOT")


class Network(str, Enum):
    ALLOWED = "allowed"
    DENIED = "denied"


@dataclass(frozen=True)
class SandboxPolicy:
    workdir: Path
    wall_clock_limit: float = 60.0
    network: Network = Network.DENIED
    env_allowlist: tuple[str, ...] = DEFAULT_ENV_ALLOWLIST

    def __post_init__(self):
        object.__setattr__(self, "workdir", Path(self.workdir).resolve())
        object.__setattr__(self, "network", Network(self.network))
        object.__setattr__(self, "env_allowlist", tuple(self.env_allowlist))
        if self.wall_clock_limit <= 0:
            raise ValueError("wall-clock-limit must be positive")

    def resolve(self, path: str | os.PathLike) -> Path:
        """Map a workspace-relative (or absolute, in-workspace) path to an absolute one.

        Symlinks are followed before the containment check, so a link that
        points outside the workdir is rejected like ``../`` would be.
        """
        raw = os.fspath(path)
        if not raw or "\0" in raw:
            raise SandboxViolation(f"invalid path {raw!r}")
        candidate = Path(raw).expanduser() if raw.startswith("~") else Path(raw)
        if not candidate.is_absolute():
            candidate = self.workdir / candidate
        resolved = candidate.resolve()
        if resolved != self.workdir and self.workdir not in resolved.parents:
            raise SandboxViolation(f"path escapes workdir: {raw!r}")
        return resolved

    def require_network(self) -> None:
        if self.network is not Network.ALLOWED:
            raise SandboxViolation("network access denied by sandbox policy")

    @property
    def envdir(self) -> Path:
        return self.workdir / META_DIR / "envdir"


@dataclass
class CommandResult:
    command: str
    exit_code: int
    stdout: str
    stderr: str
    duration: float
    timed_out: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.exit_code == 0 and not self.timed_out

    def transcript(self, limit: int = 4000) -> str:
        parts = [f"$ {self.command}", f"[exit {self.exit_code}{' timeout' if self.timed_out else ''}]"]
        if self.stdout:
            parts.append(self.stdout[-limit:])
        if self.stderr:
            parts.append("[stderr]\n" + self.stderr[-limit:])
        return "\n".join(parts)


def ensure_envdir(policy: SandboxPolicy) -> Path:
    """Create the per-repository environment directory with python shims."""
    envdir = policy.envdir
    bindir = envdir / "bin"
    bindir.mkdir(parents=True, exist_ok=True)
    (envdir / "site").mkdir(exist_ok=True)
    for name in ("python", "python3"):
        shim = bindir / name
        if not shim.exists():
            try:
                shim.symlink_to(sys.executable)
            except FileExistsError:
                pass
    for sub in ("home", "tmp"):
        (policy.workdir / META_DIR / sub).mkdir(parents=True, exist_ok=True)
    return envdir


def sandbox_env(policy: SandboxPolicy, extra: dict[str, str] | None = None) -> dict[str, str]:
    envdir = ensure_envdir(policy)
    env = {k: v for k, v in os.environ.items() if k in policy.env_allowlist}
    env["PATH"] = os.pathsep.join([str(envdir / "bin"), env.get("PATH", os.defpath)])
    site = str(envdir / "site")
    env["PYTHONPATH"] = site
    env["PYTHONDONTWRITEBYTECODE"] = "1"
    env["HOME"] = str(policy.workdir / META_DIR / "home")
    env["TMPDIR"] = str(policy.workdir / META_DIR / "tmp")
    env["AGENTIZER_WORKSPACE"] = str(policy.workdir)
    env["AGENTIZER_ENVDIR"] = str(envdir)
    env["AGENTIZER_NETWORK"] = policy.network.value
    if extra:
        env.update(extra)
    return env


def run_command(
    command: str | list[str],
    policy: SandboxPolicy,
    *,
    cwd: str | os.PathLike | None = None,
    timeout: float | None = None,
    extra_env: dict[str, str] | None = None,
    stdin: str | None = None,
) -> CommandResult:
    """Run ``command`` under ``policy``; the whole process group is killed on timeout."""
    limit = policy.wall_clock_limit if timeout is None else min(timeout, policy.wall_clock_limit)
    workdir = policy.resolve(cwd) if cwd is not None else policy.workdir
    shell = isinstance(command, str)
    display = command if shell else " ".join(command)
    started = time.monotonic()
    proc = subprocess.Popen(
        command,
        shell=shell,
        cwd=workdir,
        env=sandbox_env(policy, extra_env),
        stdin=subprocess.PIPE if stdin is not None else subprocess.DEVNULL,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        errors="replace",
        start_new_session=True,
    )
    timed_out = False
    try:
        out, err = proc.communicate(input=stdin, timeout=limit)
    except subprocess.TimeoutExpired:
        timed_out = True
        _kill_group(proc)
        try:
            out, err = proc.communicate(timeout=5)
        except subprocess.TimeoutExpired:
            out, err = "", ""
    duration = time.monotonic() - started
    code = proc.returncode if proc.returncode is not None else -signal.SIGKILL
    return CommandResult(display, code, out or "", err or "", duration, timed_out)


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()
