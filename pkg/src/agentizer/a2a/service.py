"""HTTP service fronting one finished repository agent, plus a small client."""

from __future__ import annotations

import errno
import hashlib
import json
import logging
import re
import shlex
import threading
import urllib.error
import urllib.parse
import urllib.request
from email.message import Message
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

import jsonschema

from agentizer.a2a.card import CARD_PATH, PLACEHOLDER, AgentCard, AgentSkill, card_path
from agentizer.a2a.wire import A2ARequest, A2AResponse, ResponseStatus
from agentizer.errors import AgentizerError, PortInUse, PreconditionError
from agentizer.model import EnvState, EnvStatus
from agentizer.runlog import utcnow
from agentizer.tools.registry import Toolbox

log = logging.getLogger(__name__)

TASKS_PATH = "/tasks"
ARTIFACTS_PATH = "/artifacts/"
_TOKEN = re.compile(r"^[0-9a-f]{8,64}$")
MAX_BODY = 64 * 1024 * 1024


class InputError(AgentizerError):
    code = "rejected"


class AgentService:
    """Answers card, task and artifact requests for one workspace.

    Construction is the serve gate: it refuses environments that have not
    finished agentization.
    """

    def __init__(
        self,
        card: AgentCard,
        env: EnvState,
        toolbox: Toolbox,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
        timeout: float | None = None,
    ):
        if env.status is not EnvStatus.FINISHED:
            raise PreconditionError(f"cannot serve an environment whose status is {env.status.value}")
        self.env = env
        self.toolbox = toolbox
        self.timeout = timeout
        self.artifact_dir = toolbox.meta / "artifacts"
        self.artifact_dir.mkdir(parents=True, exist_ok=True)
        self.audit: list[dict[str, Any]] = []
        self._audit_lock = threading.Lock()
        self._audit_file = toolbox.meta / "a2a-audit.log"
        try:
            self.httpd = ThreadingHTTPServer((host, port), _handler_class(self))
        except OSError as exc:
            if exc.errno in (errno.EADDRINUSE, errno.EACCES):
                raise PortInUse(f"port {port} on {host} is unavailable: {exc.strerror}") from exc
            raise
        self.httpd.daemon_threads = True
        self.host, self.port = self.httpd.server_address[:2]
        self.base_url = f"http://{self.host}:{self.port}"
        if card.endpoint != self.base_url:
            card = card.with_endpoint(self.base_url)
        self.card = card
        self.card_bytes = card.to_json().encode("utf-8")
        card_path(toolbox.workspace).write_bytes(self.card_bytes)
        self._thread: threading.Thread | None = None

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> AgentService:
        self._thread = threading.Thread(target=self.httpd.serve_forever, name=f"a2a-{self.port}", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        try:
            self.httpd.serve_forever()
        finally:
            self.httpd.server_close()

    def __enter__(self) -> AgentService:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- task handling ------------------------------------------------------

    def _record(self, task_id: str, event: str, **detail: Any) -> None:
        entry = {"timestamp": utcnow(), "task-id": task_id, "event": event, **detail}
        with self._audit_lock:
            self.audit.append(entry)
            with self._audit_file.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def handle(self, request: A2ARequest) -> A2AResponse:
        skill = self.card.skill(request.skill_id)
        if skill is None:
            self._record(request.task_id, "rejected", reason="unknown skill")
            return A2AResponse(request.task_id, ResponseStatus.REJECTED,
                               diagnostic=f"unknown skill {request.skill_id!r}")
        try:
            jsonschema.validate(dict(request.input), skill.request_schema())
        except jsonschema.ValidationError as exc:
            self._record(request.task_id, "rejected", reason=exc.message)
            return A2AResponse(request.task_id, ResponseStatus.REJECTED, diagnostic=f"invalid input: {exc.message}")
        self._record(request.task_id, "validated", skill=skill.id)
        try:
            values = self._localize_inputs(skill, request.input)
        except (InputError, AgentizerError, OSError, ValueError) as exc:
            self._record(request.task_id, "rejected", reason=str(exc))
            return A2AResponse(request.task_id, ResponseStatus.REJECTED, diagnostic=f"input not usable: {exc}")
        outputs = {
            name: self.artifact_dir / f"{_token(request.task_id, name)}{src[len('file:'):]}"
            for name, src in skill.outputs.items()
            if src.startswith("file:")
        }
        command = _render(skill.template, values, outputs)
        self._record(request.task_id, "executing", skill=skill.id, command=command)
        result = self.toolbox.run_command(command, timeout=self.timeout)
        if result.timed_out or result.exit_code != 0:
            self._record(request.task_id, "failed", exit_code=result.exit_code)
            return A2AResponse(request.task_id, ResponseStatus.FAILED, diagnostic=result.transcript())
        out: dict[str, Any] = {}
        artifacts = []
        for name, src in skill.outputs.items():
            if src == "stdout":
                out[name] = result.stdout.strip()
                continue
            path = outputs[name]
            if not path.is_file() or path.stat().st_size == 0:
                self._record(request.task_id, "failed", reason=f"missing output {name}")
                return A2AResponse(request.task_id, ResponseStatus.FAILED,
                                   diagnostic=f"skill produced no {name} output\n{result.transcript()}")
            url = f"{self.base_url}{ARTIFACTS_PATH}{path.stem}"
            out[name] = url
            artifacts.append(url)
        try:
            jsonschema.validate(out, skill.response_schema())
        except jsonschema.ValidationError as exc:
            self._record(request.task_id, "failed", reason=exc.message)
            return A2AResponse(request.task_id, ResponseStatus.FAILED, diagnostic=f"output invalid: {exc.message}")
        self._record(request.task_id, "completed")
        return A2AResponse(request.task_id, ResponseStatus.COMPLETED, out, tuple(artifacts))

    def _localize_inputs(self, skill: AgentSkill, given) -> dict[str, str]:
        values: dict[str, str] = {}
        for name, spec in skill.input_schema.items():
            if name not in given:
                values[name] = ""
                continue
            value = given[name]
            if spec.type != "file":
                values[name] = str(value).lower() if isinstance(value, bool) else str(value)
                continue
            values[name] = str(self._localize_file(value))
        return values

    def _localize_file(self, value: str) -> Path:
        if value.startswith(("http://", "https://", "data:")):
            if value.startswith(self.base_url + ARTIFACTS_PATH):
                local = self.artifact_path(value[len(self.base_url + ARTIFACTS_PATH):])
                if local is not None:
                    return local
            data, suffix = fetch_url(value)
            if not data:
                raise InputError(f"empty file input from {value[:80]}")
            target = self.artifact_dir / f"in-{hashlib.sha256(data).hexdigest()[:16]}{suffix}"
            target.write_bytes(data)
            return target
        path = self.toolbox.policy.resolve(value)
        if not path.is_file():
            raise InputError(f"no such file in workspace: {value}")
        return path

    def artifact_path(self, token: str) -> Path | None:
        if not _TOKEN.match(token):
            return None
        hits = sorted(p for p in self.artifact_dir.glob(f"{token}*") if p.stem == token and p.is_file())
        return hits[0] if hits else None


def _token(task_id: str, field_name: str) -> str:
    return hashlib.sha256(f"{task_id}\0{field_name}".encode()).hexdigest()[:24]


def _render(template: str, values: dict[str, str], outputs: dict[str, Path]) -> str:
    def sub(m: re.Match) -> str:
        kind, name = m.group(1), m.group(2)
        if kind == "in":
            val = values.get(name, "")
            return shlex.quote(val) if val else ""
        return shlex.quote(str(outputs[name]))

    return " ".join(PLACEHOLDER.sub(sub, template).split())


def _handler_class(service: AgentService):
    class Handler(BaseHTTPRequestHandler):
        server_version = "agentizer-a2a/1"

        def log_message(self, fmt, *args):  # route access logs to logging, not stderr
            log.debug("%s " + fmt, self.address_string(), *args)

        def _send(self, status: int, body: bytes, ctype: str = "application/json", extra=None) -> None:
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            for k, v in (extra or {}).items():
                self.send_header(k, v)
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            path = urllib.parse.urlsplit(self.path).path
            if path == CARD_PATH:
                self._send(HTTPStatus.OK, service.card_bytes)
                return
            if path.startswith(ARTIFACTS_PATH):
                local = service.artifact_path(path[len(ARTIFACTS_PATH):])
                if local is not None:
                    self._send(HTTPStatus.OK, local.read_bytes(), "application/octet-stream",
                               {"Content-Disposition": f'attachment; filename="{local.name}"'})
                    return
            self._send(HTTPStatus.NOT_FOUND, b'{"error": "not found"}')

        def do_POST(self):
            if urllib.parse.urlsplit(self.path).path != TASKS_PATH:
                self._send(HTTPStatus.NOT_FOUND, b'{"error": "not found"}')
                return
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY:
                self._send(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, b'{"error": "request too large"}')
                return
            body = self.rfile.read(length)
            try:
                request = A2ARequest.from_json(body)
            except (ValueError, KeyError, TypeError, AgentizerError) as exc:
                task_id = _guess_task_id(body)
                service._record(task_id, "rejected", reason=f"malformed request: {exc}")
                resp = A2AResponse(task_id, ResponseStatus.REJECTED, diagnostic=f"malformed request: {exc}")
                self._send(HTTPStatus.BAD_REQUEST, resp.to_json().encode())
                return
            resp = service.handle(request)
            self._send(HTTPStatus.OK, resp.to_json().encode())

    return Handler


def _guess_task_id(body: bytes) -> str:
    try:
        value = json.loads(body).get("task-id")
    except (ValueError, AttributeError):
        value = None
    return str(value) if value else "unknown"


# -- client ----------------------------------------------------------------


def fetch_url(url: str, timeout: float = 30.0) -> tuple[bytes, str]:
    """Fetch ``url`` (http, https or data); returns (bytes, file suffix)."""
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            data = resp.read()
            headers: Message = resp.headers
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise InputError(f"cannot fetch {url[:80]}: {exc}") from exc
    filename = headers.get_filename() if headers else None
    if not filename and url.startswith("data:"):
        m = re.search(r";name=([^;,]+)", url.split(",", 1)[0])
        filename = urllib.parse.unquote(m.group(1)) if m else None
    if not filename:
        filename = urllib.parse.urlsplit(url).path
    return data, Path(filename or "").suffix


def card_url(url: str) -> str:
    return url if url.rstrip("/").endswith(CARD_PATH) else url.rstrip("/") + CARD_PATH


def fetch_card(url: str, timeout: float = 30.0) -> AgentCard:
    with urllib.request.urlopen(card_url(url), timeout=timeout) as resp:
        return AgentCard.from_json(resp.read())


def send_task(endpoint: str, request: A2ARequest, timeout: float = 600.0) -> A2AResponse:
    req = urllib.request.Request(
        endpoint.rstrip("/") + TASKS_PATH,
        data=request.to_json().encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return A2AResponse.from_json(resp.read())
    except urllib.error.HTTPError as exc:
        body = exc.read()
        try:
            return A2AResponse.from_json(body)
        except (ValueError, KeyError):
            return A2AResponse(request.task_id, ResponseStatus.FAILED, diagnostic=f"HTTP {exc.code}")
    except (urllib.error.URLError, OSError) as exc:
        return A2AResponse(request.task_id, ResponseStatus.FAILED, diagnostic=f"unreachable agent: {exc}")


def serve(card: AgentCard, env: EnvState, toolbox: Toolbox, port: int = 0, host: str = "127.0.0.1") -> AgentService:
    """Start a service in a background thread and return its handle."""
    return AgentService(card, env, toolbox, host=host, port=port).start()
