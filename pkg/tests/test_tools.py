import base64
import hashlib
import io
import os
import random
import threading
import time
import zipfile
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from agentizer.errors import PreconditionError, SandboxViolation
from agentizer.model import EnvState, Goal, Operation
from agentizer.planner import ScriptedPlanner
from agentizer.tools import SandboxPolicy, make_toolbox, run_command
from agentizer.tools.deps import conflicting_pins, detect_kind
from agentizer.tools.sandbox import META_DIR
from agentizer.tools.todo import TodoItem, store_for, todo_verify
from support import FIXTURES

SEGMENTS = ["..", "..", ".", "a", "b", "outside", "link", "~", "%2e%2e", "..\\..", "deep/../..", ""]


def snapshot(root: Path, skip: Path) -> dict[str, tuple[int, str]]:
    """Every file and directory under ``root`` except the ``skip`` subtree, with content digests."""
    seen = {}
    for dirpath, dirnames, filenames in os.walk(root):
        here = Path(dirpath)
        if here == skip or skip in here.parents:
            dirnames[:] = []
            continue
        for name in dirnames:
            seen[str((here / name).relative_to(root))] = (-1, "")
        for name in filenames:
            p = here / name
            if p.is_symlink():
                seen[str(p.relative_to(root))] = (-2, os.readlink(p))
            else:
                seen[str(p.relative_to(root))] = (p.stat().st_size, hashlib.sha256(p.read_bytes()).hexdigest())
    return seen


def traversal_corpus(outside: Path, n: int, seed: int = 0) -> list[str]:
    rnd = random.Random(seed)
    corpus = []
    for _ in range(n):
        style = rnd.random()
        if style < 0.15:
            corpus.append(str(outside / f"abs{rnd.randrange(1000)}.txt"))
        elif style < 0.25:
            corpus.append("~/" + "/".join(rnd.choice(SEGMENTS) for _ in range(rnd.randint(0, 3))) + "/f.txt")
        else:
            parts = [rnd.choice(SEGMENTS) for _ in range(rnd.randint(1, 6))]
            corpus.append("/".join(parts) + rnd.choice(["/f.txt", "/x", "", "/outside/f.txt"]))
    return corpus


def path_operations(path: str) -> list[Operation]:
    return [
        Operation("write-file", {"path": path, "content": "escaped"}),
        Operation("read-file", {"path": path}),
        Operation("exec-script", {"command": "echo hi > out.txt", "cwd": path}),
        Operation("exec-script", {"script": path}),
        Operation("file-download", {"url": "http://127.0.0.1:9/x", "dest": path}),
        Operation("install-deps", {"manifest": path, "kind": "custom-script"}),
    ]


def test_path_fuzz_never_writes_outside_the_workspace(tmp_path, monkeypatch):
    outside = tmp_path / "outside"
    outside.mkdir()
    (outside / "keep.txt").write_text("keep")
    monkeypatch.setenv("HOME", str(tmp_path / "home"))
    (tmp_path / "home").mkdir()
    ws = tmp_path / "ws"
    (ws / "a" / "b").mkdir(parents=True)
    (ws / "link").symlink_to(outside, target_is_directory=True)
    before = snapshot(tmp_path, ws)
    toolbox = make_toolbox(ws, network="allowed", wall_clock_limit=5)
    env = EnvState(ws)
    corpus = traversal_corpus(outside, 500)
    escapes = 0
    for path in corpus:
        for op in path_operations(path):
            result = toolbox.invoke(op, env, "fuzz")
            if result.ok:
                for artifact in result.artifacts:
                    assert ws.resolve() in Path(artifact).resolve().parents
        escapes += 1
        assert snapshot(tmp_path, ws) == before, path
    assert escapes == len(corpus) >= 500
    assert (outside / "keep.txt").read_text() == "keep"


def test_symlink_escape_is_a_sandbox_violation(tmp_path):
    (tmp_path / "out").mkdir()
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / "link").symlink_to(tmp_path / "out", target_is_directory=True)
    policy = SandboxPolicy(ws)
    with pytest.raises(SandboxViolation):
        policy.resolve("link/x")
    with pytest.raises(SandboxViolation):
        policy.resolve("../ws2/x")
    with pytest.raises(SandboxViolation):
        policy.resolve("")
    assert policy.resolve("a/../b") == ws.resolve() / "b"


@pytest.mark.parametrize("limit", [0.2, 0.3, 0.5])
def test_timeouts_fire_within_one_and_a_half_limits(tmp_path, limit):
    toolbox = make_toolbox(tmp_path, wall_clock_limit=limit)
    env = EnvState(tmp_path)
    commands = ["sleep 30", "sh -c 'sleep 30 & sleep 30; wait'", "python3 -c 'while True: pass'",
                "yes > /dev/null"]
    for i in range(20):
        command = commands[i % len(commands)]
        started = time.monotonic()
        result = toolbox.invoke(Operation("exec-script", {"command": command}), env, f"t{i}")
        elapsed = time.monotonic() - started
        assert result.error == "timeout"
        assert elapsed <= 1.5 * limit, (command, elapsed)


def test_per_call_timeout_is_capped_by_the_policy(tmp_path):
    policy = SandboxPolicy(tmp_path, wall_clock_limit=0.3)
    result = run_command("sleep 5", policy, timeout=100)
    assert result.timed_out and result.duration <= 0.45


def test_sandbox_env_is_filtered(tmp_path, monkeypatch):
    monkeypatch.setenv("SECRET_TOKEN", "leak")
    result = run_command("env", SandboxPolicy(tmp_path))
    assert "SECRET_TOKEN" not in result.stdout
    assert f"HOME={tmp_path.resolve() / META_DIR / 'home'}" in result.stdout


# -- basic tools -------------------------------------------------------------------

def test_read_write_exec_round_trip(tmp_path):
    toolbox = make_toolbox(tmp_path)
    env = EnvState(tmp_path)
    wrote = toolbox.invoke(Operation("write-file", {"path": "cfg/app.json", "content": '{"a": 1}'}), env, "n1")
    assert wrote.ok and "file:cfg/app.json" in env.installed_artifacts
    read = toolbox.invoke(Operation("read-file", {"path": "cfg/app.json"}), env, "n2")
    assert read.data["text"] == '{"a": 1}'
    assert read.context_increment[0].kind.value == "configuration"
    (tmp_path / "s.py").write_text("import sys; print('args', *sys.argv[1:])\n")
    ran = toolbox.invoke(Operation("exec-script", {"script": "s.py", "args": ["x", "y"]}), env, "n3")
    assert ran.data["stdout"].strip() == "args x y"
    assert (tmp_path / META_DIR / "transcripts" / "n3.txt").is_file()


def test_exec_failure_and_missing_artifact(tmp_path):
    toolbox = make_toolbox(tmp_path)
    env = EnvState(tmp_path)
    assert toolbox.invoke(Operation("exec-script", {"command": "exit 3"}), env).data["exit_code"] == 3
    missing = toolbox.invoke(Operation("exec-script", {"command": "true", "produces": ["nope.bin"]}), env)
    assert missing.error == "tool-failure" and "nope.bin" in missing.diagnostic


def test_registry_rejects_unknown_tools_and_bad_arguments(tmp_path):
    toolbox = make_toolbox(tmp_path)
    env = EnvState(tmp_path)
    assert toolbox.invoke(Operation("rm-rf", {}), env).error == "unknown-tool"
    assert toolbox.invoke(Operation("write-file", {"path": "x"}), env).error == "argument-schema-violation"
    assert toolbox.invoke(Operation("read-file", {"path": "x", "bogus": 1}), env).error == "argument-schema-violation"
    assert toolbox.invoke(Operation("read-file", {"path": 7}), env).error == "argument-schema-violation"
    assert toolbox.audit[0] == ("rm-rf", False)
    assert not (tmp_path / "x").exists()


def test_catalog_lists_every_tool_class(tmp_path):
    categories = {t["category"] for t in make_toolbox(tmp_path).registry.catalog()}
    assert {"basic", "download", "todo", "dependency"} <= categories


# -- download ----------------------------------------------------------------------

PAYLOAD = bytes(range(256)) * 64


class RangeHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_GET(self):
        if self.path != "/data.bin":
            self.send_error(404)
            return
        start = 0
        rng = self.headers.get("Range")
        if rng:
            start = int(rng.split("=")[1].rstrip("-"))
            if start >= len(PAYLOAD):
                self.send_error(416)
                return
            self.send_response(206)
        else:
            self.send_response(200)
        body = PAYLOAD[start:]
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture(scope="module")
def file_server():
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), RangeHandler)
    threading.Thread(target=httpd.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{httpd.server_address[1]}"
    httpd.shutdown()
    httpd.server_close()


def test_download_verifies_checksum_and_resumes(tmp_path, file_server):
    toolbox = make_toolbox(tmp_path, network="allowed")
    env = EnvState(tmp_path)
    digest = hashlib.sha256(PAYLOAD).hexdigest()
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "data.bin.part").write_bytes(PAYLOAD[:1000])
    op = Operation("file-download", {"url": f"{file_server}/data.bin", "dest": "d/data.bin",
                                     "checksum": f"sha256:{digest}"})
    result = toolbox.invoke(op, env, "n1")
    assert result.ok and (tmp_path / "d" / "data.bin").read_bytes() == PAYLOAD
    assert f"download:d/data.bin@sha256:{digest}" in env.installed_artifacts
    bad = Operation("file-download", {"url": f"{file_server}/data.bin", "dest": "e.bin", "checksum": "0" * 64})
    assert toolbox.invoke(bad, env).error == "checksum-mismatch"
    assert not (tmp_path / "e.bin").exists() and not (tmp_path / "e.bin.part").exists()
    missing = Operation("file-download", {"url": f"{file_server}/none", "dest": "f.bin"})
    assert toolbox.invoke(missing, env).error == "network-error"


def test_download_needs_network_permission(tmp_path, file_server):
    toolbox = make_toolbox(tmp_path)
    result = toolbox.invoke(Operation("file-download", {"url": f"{file_server}/data.bin", "dest": "x"}),
                            EnvState(tmp_path))
    assert result.error == "sandbox-violation"


# -- dependencies ------------------------------------------------------------------

def build_wheel(dest: Path, name: str, version: str) -> Path:
    dist = f"{name}-{version}.dist-info"
    files = {
        f"{name}/__init__.py": f"VERSION = {version!r}\n",
        f"{dist}/METADATA": f"Metadata-Version: 2.1\nName: {name}\nVersion: {version}\n",
        f"{dist}/WHEEL": "Wheel-Version: 1.0\nGenerator: test\nRoot-Is-Purelib: true\nTag: py3-none-any\n",
    }
    record = []
    for path, text in files.items():
        digest = base64.urlsafe_b64encode(hashlib.sha256(text.encode()).digest()).rstrip(b"=").decode()
        record.append(f"{path},sha256={digest},{len(text.encode())}")
    record.append(f"{dist}/RECORD,,")
    files[f"{dist}/RECORD"] = "\n".join(record) + "\n"
    wheel = dest / f"{name}-{version}-py3-none-any.whl"
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for path, text in files.items():
            zf.writestr(path, text)
    wheel.write_bytes(buf.getvalue())
    return wheel


def test_install_deps_uses_the_isolated_envdir(tmp_path):
    wheels = tmp_path / "wheels"
    wheels.mkdir()
    build_wheel(wheels, "stubpkg", "1.0")
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / "requirements.txt").write_text("stubpkg==1.0\n")
    toolbox = make_toolbox(ws, find_links=wheels)
    env = EnvState(ws)
    result = toolbox.invoke(Operation("install-deps", {"manifest": "requirements.txt"}), env, "n1")
    assert result.ok, result.diagnostic
    assert "package:stubpkg==1.0" in env.installed_artifacts
    assert (ws / META_DIR / "envdir" / "site" / "stubpkg" / "__init__.py").is_file()
    probe = toolbox.run_command("python -c 'import stubpkg; print(stubpkg.VERSION)'")
    assert probe.stdout.strip() == "1.0"


def test_conflicting_pins_are_a_resolver_conflict(tmp_path):
    (tmp_path / "requirements.txt").write_text("stub-pkg==1.0\nStub_Pkg==2.0\n")
    assert conflicting_pins((tmp_path / "requirements.txt").read_text()) == [("stub-pkg==1.0", "Stub_Pkg==2.0")]
    toolbox = make_toolbox(tmp_path, find_links=tmp_path)
    result = toolbox.invoke(Operation("install-deps", {"manifest": "requirements.txt"}), EnvState(tmp_path))
    assert result.error == "resolver-conflict"


def test_manifest_kind_detection(tmp_path):
    assert detect_kind(Path("environment.yml")).value == "conda-env"
    assert detect_kind(Path("requirements.lock")).value == "lockfile"
    assert detect_kind(Path("setup.sh")).value == "custom-script"
    with pytest.raises(PreconditionError):
        detect_kind(Path("Makefile"))


def test_poetry_lock_needs_its_own_installer(tmp_path):
    (tmp_path / "poetry.lock").write_text("")
    result = make_toolbox(tmp_path).invoke(Operation("install-deps", {"manifest": "poetry.lock"}), EnvState(tmp_path))
    assert result.error == "installer-missing"


# -- TODO tools --------------------------------------------------------------------

def test_todo_init_and_verify(tmp_path):
    planner = ScriptedPlanner.from_file(FIXTURES / "hello-repo" / "agentize-plan.json")
    toolbox = make_toolbox(tmp_path, planner=planner)
    env = EnvState(tmp_path)
    result = toolbox.invoke(Operation("todo-init", {"goal": "To agentize the given repo"}), env, "n1")
    assert result.ok
    items = [TodoItem.from_dict(i) for i in result.data["items"]]
    assert len(items) == 3
    marker = next(i for i in items if i.check_kind == "artifact-exists")
    verify = Operation("todo-verify", {"item": marker.id})
    assert toolbox.invoke(verify, env).data["verified"] is False
    (tmp_path / marker.check_arg).parent.mkdir(parents=True, exist_ok=True)
    (tmp_path / marker.check_arg).write_text("x")
    assert toolbox.invoke(verify, env).data["verified"] is True
    _, stored = store_for(tmp_path).find(marker.id)
    assert stored.status.value == "done"


def test_todo_verify_outside_path_is_false(tmp_path):
    item = TodoItem.from_goal(Goal("g", "escape", check=None))
    item.check_kind, item.check_arg = "artifact-exists", "../etc/passwd"
    assert todo_verify(item, EnvState(tmp_path)) is False
