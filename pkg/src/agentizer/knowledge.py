"""Code knowledge graph and the usage knowledge base built on top of it.

Extraction is lexical and structural: the file tree, Python syntax trees
(regexes for other languages), README sections with fenced commands,
shebangs and executable bits. Ranking is plain token overlap.
"""

from __future__ import annotations

import ast
import json
import logging
import os
import re
import shlex
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from agentizer import ids
from agentizer.errors import AgentizerError
from agentizer.model import Context, ContextItem, ContextKind
from agentizer.tools.registry import ArgSpec, ToolContext, ToolRegistry, ToolResult, ToolSpec
from agentizer.tools.sandbox import META_DIR

log = logging.getLogger(__name__)

SOURCE_SUFFIXES = {".py", ".sh", ".bash", ".js", ".mjs", ".ts", ".c", ".h", ".cc", ".cpp", ".hpp",
                   ".rs", ".go", ".java", ".rb", ".pl", ".r", ".R", ".jl"}
DATASET_SUFFIXES = {".csv", ".tsv", ".jsonl", ".parquet", ".npy", ".npz", ".pgm", ".ppm", ".png", ".jpg",
                    ".jpeg", ".wav", ".mp3", ".txt"}
MODEL_SUFFIXES = {".pt", ".pth", ".ckpt", ".onnx", ".safetensors", ".h5", ".pkl", ".joblib", ".bin"}
SKIP_DIRS = {META_DIR, ".git", "__pycache__", "node_modules", ".venv", "venv", ".tox", ".mypy_cache",
             ".pytest_cache"}
_SHELL_FENCES = {"", "sh", "bash", "shell", "console", "zsh"}
_FENCE = re.compile(r"^```([^\n]*)\n(.*?)^```", re.M | re.S)
_HEADING = re.compile(r"^(#{1,6})\s+(.+?)\s*#*\s*$", re.M)
_OTHER_DEFS = {
    "function": re.compile(
        r"^\s*(?:export\s+)?(?:async\s+)?(?:function\s+([A-Za-z_$][\w$]*)|fn\s+([A-Za-z_]\w*)|"
        r"func\s+(?:\([^)]*\)\s*)?([A-Za-z_]\w*)|def\s+([A-Za-z_]\w*)|([A-Za-z_]\w*)\s*\(\)\s*\{)",
        re.M,
    ),
    "class-like": re.compile(r"^\s*(?:export\s+)?(?:pub\s+)?(?:class|struct|trait|interface|enum)\s+([A-Za-z_]\w*)", re.M),
}
_TOKEN = re.compile(r"[a-z0-9]+")
STOPWORDS = frozenset(
    "a an and are as at be by can do does for from how i in is it me my of on or please run the this "
    "to use using what with you your should would could get make".split()
)
CODE_KINDS = {"file", "function", "class-like", "entry-point"}
RELATIONS = {
    # relation -> (allowed source kinds, allowed target kinds)
    "contains": ({"file", "class-like"}, {"function", "class-like", "entry-point"}),
    "calls": ({"function", "entry-point"}, {"function", "class-like"}),
    "documents": ({"capability"}, {"entry-point", "file"}),
    "implements-capability": ({"file", "function", "class-like", "entry-point"}, {"capability"}),
    "requires-artifact": ({"file", "entry-point"}, {"dataset", "model-artifact"}),
}


class EntityKind(str, Enum):
    FILE = "file"
    FUNCTION = "function"
    CLASS_LIKE = "class-like"
    CAPABILITY = "capability"
    ENTRY_POINT = "entry-point"
    DATASET = "dataset"
    MODEL_ARTIFACT = "model-artifact"


@dataclass(frozen=True)
class CkgEntity:
    id: str
    kind: EntityKind
    name: str
    location: str = ""
    span: tuple[int, int] | None = None
    summary: str = ""
    attrs: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", EntityKind(self.kind))
        if self.span is not None:
            object.__setattr__(self, "span", tuple(self.span))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "name": self.name,
            "location": self.location,
            "span": list(self.span) if self.span else None,
            "summary": self.summary,
            "attrs": dict(self.attrs),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CkgEntity:
        span = data.get("span")
        return cls(data["id"], EntityKind(data["kind"]), data["name"], data.get("location", ""),
                   tuple(span) if span else None, data.get("summary", ""), dict(data.get("attrs", {})))


@dataclass(frozen=True)
class CkgEdge:
    src: str
    dst: str
    relation: str

    def to_dict(self) -> dict[str, str]:
        return {"from": self.src, "to": self.dst, "relation": self.relation}


@dataclass
class CodeKnowledgeGraph:
    entities: dict[str, CkgEntity] = field(default_factory=dict)
    edges: list[CkgEdge] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def add(self, entity: CkgEntity) -> CkgEntity:
        self.entities.setdefault(entity.id, entity)
        return self.entities[entity.id]

    def link(self, src: str, dst: str, relation: str) -> None:
        edge = CkgEdge(src, dst, relation)
        if edge not in self.edges:
            self.edges.append(edge)

    def of_kind(self, kind: EntityKind | str) -> list[CkgEntity]:
        kind = EntityKind(kind)
        return [e for _, e in sorted(self.entities.items()) if e.kind is kind]

    def neighbors(self, entity_id: str, relation: str | None = None) -> list[str]:
        out = [e.dst for e in self.edges if e.src == entity_id and (relation is None or e.relation == relation)]
        out += [e.src for e in self.edges if e.dst == entity_id and (relation is None or e.relation == relation)]
        return sorted(set(out))

    def integrity_errors(self, repo: str | Path | None = None) -> list[str]:
        errors = []
        for edge in self.edges:
            if edge.src not in self.entities or edge.dst not in self.entities:
                errors.append(f"dangling edge {edge}")
                continue
            allowed = RELATIONS.get(edge.relation)
            if allowed is None:
                errors.append(f"unknown relation {edge.relation}")
                continue
            src_kind, dst_kind = self.entities[edge.src].kind.value, self.entities[edge.dst].kind.value
            if src_kind not in allowed[0] or dst_kind not in allowed[1]:
                errors.append(f"{edge.relation} from {src_kind} to {dst_kind}: {edge}")
        for ent in self.entities.values():
            if ent.kind is EntityKind.CAPABILITY:
                if not any(self.entities[n].kind.value in CODE_KINDS for n in self.neighbors(ent.id)
                           if n in self.entities):
                    errors.append(f"capability {ent.id} links to no code entity")
            elif repo is not None and ent.kind.value in CODE_KINDS and ent.location:
                if not (Path(repo) / ent.location).exists():
                    errors.append(f"{ent.id}: location {ent.location} does not exist")
        return errors

    def normalized(self) -> dict[str, Any]:
        """Canonical form: equal for isomorphic graphs built over the same tree."""
        return {
            "entities": [self.entities[k].to_dict() for k in sorted(self.entities)],
            "edges": sorted((e.src, e.dst, e.relation) for e in self.edges),
        }

    def to_dict(self) -> dict[str, Any]:
        data = self.normalized()
        data["edges"] = [{"from": s, "to": d, "relation": r} for s, d, r in data["edges"]]
        data["warnings"] = list(self.warnings)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CodeKnowledgeGraph:
        graph = cls(warnings=list(data.get("warnings", ())))
        for e in data.get("entities", ()):
            graph.add(CkgEntity.from_dict(e))
        for e in data.get("edges", ()):
            graph.link(e["from"], e["to"], e["relation"])
        return graph

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> CodeKnowledgeGraph:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _repo_files(repo: Path) -> list[Path]:
    out = []
    for dirpath, dirnames, filenames in os.walk(repo):
        dirnames[:] = sorted(d for d in dirnames if d not in SKIP_DIRS and not d.startswith("."))
        for name in sorted(filenames):
            if not name.startswith("."):
                out.append(Path(dirpath) / name)
    return out


def _first_line(text: str | None) -> str:
    if not text:
        return ""
    for line in text.strip().splitlines():
        if line.strip():
            return line.strip()
    return ""


def _is_executable(path: Path, text: str) -> bool:
    if text.startswith("#!"):
        return True
    if path.suffix == ".py" and re.search(r"^if\s+__name__\s*==\s*['\"]__main__['\"]\s*:", text, re.M):
        return True
    return path.suffix in (".sh", ".bash") or os.access(path, os.X_OK)


def _python_defs(graph: CodeKnowledgeGraph, rel: str, file_id: str, text: str) -> tuple[str, dict[str, str]]:
    """Add function/class entities of one Python file; returns (module docstring, name -> id)."""
    try:
        tree = ast.parse(text)
    except (SyntaxError, ValueError) as exc:
        graph.warnings.append(f"{rel}: unparseable ({exc.__class__.__name__}); no functions extracted")
        log.warning("unparseable source %s: %s", rel, exc)
        return "", {}
    names: dict[str, str] = {}
    bodies: dict[str, ast.AST] = {}

    def visit(parent_id: str, body: Iterable[ast.stmt], prefix: str) -> None:
        for node in body:
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                kind, label = EntityKind.FUNCTION, "function"
            elif isinstance(node, ast.ClassDef):
                kind, label = EntityKind.CLASS_LIKE, "class"
            else:
                continue
            qual = f"{prefix}{node.name}"
            eid = f"{label}:{rel}:{qual}"
            graph.add(CkgEntity(eid, kind, node.name, rel, (node.lineno, node.end_lineno or node.lineno),
                                _first_line(ast.get_docstring(node)), {"qualname": qual}))
            graph.link(parent_id, eid, "contains")
            names.setdefault(node.name, eid)
            bodies[eid] = node
            if isinstance(node, ast.ClassDef):
                visit(eid, node.body, f"{qual}.")

    visit(file_id, tree.body, "")
    for eid, node in bodies.items():
        if not eid.startswith("function:"):
            continue
        for sub in ast.walk(node):
            if isinstance(sub, ast.Call) and isinstance(sub.func, ast.Name) and sub.func.id in names:
                target = names[sub.func.id]
                if target != eid:
                    graph.link(eid, target, "calls")
    return ast.get_docstring(tree) or "", names


def _other_defs(graph: CodeKnowledgeGraph, rel: str, file_id: str, text: str) -> None:
    for label, pattern in _OTHER_DEFS.items():
        kind = EntityKind(label)
        prefix = "function" if kind is EntityKind.FUNCTION else "class"
        for m in pattern.finditer(text):
            name = next(g for g in m.groups() if g)
            if name in ("if", "for", "while", "switch", "return"):
                continue
            line = text.count("\n", 0, m.start()) + 1
            eid = f"{prefix}:{rel}:{name}"
            graph.add(CkgEntity(eid, kind, name, rel, (line, line)))
            graph.link(file_id, eid, "contains")


def _readme_sections(text: str) -> list[tuple[str, str]]:
    """(heading, body) pairs; text before the first heading is titled by the file."""
    heads = list(_HEADING.finditer(text))
    sections = []
    if not heads:
        return [("", text)]
    if heads[0].start() > 0:
        sections.append(("", text[: heads[0].start()]))
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        sections.append((m.group(2).strip(), text[m.end():end]))
    return sections


def _fence_commands(body: str) -> list[str]:
    out = []
    for m in _FENCE.finditer(body):
        info = m.group(1).strip().lower().split()
        lang = info[0] if info else ""
        if lang not in _SHELL_FENCES:
            continue
        for line in m.group(2).splitlines():
            line = line.strip()
            if line.startswith("$ "):
                line = line[2:]
            if line and not line.startswith("#"):
                out.append(line)
    return out


def _prose(body: str) -> str:
    text = _FENCE.sub("", body)
    for para in re.split(r"\n\s*\n", text):
        para = " ".join(para.split())
        if para:
            return para
    return ""


def _script_of(command: str, scripts: Mapping[str, str]) -> str | None:
    try:
        parts = shlex.split(command)
    except ValueError:
        parts = command.split()
    for part in parts[:3]:
        cleaned = part[2:] if part.startswith("./") else part
        if cleaned in scripts:
            return cleaned
    return None


def build_ckg(repo: str | Path) -> CodeKnowledgeGraph:
    repo = Path(repo)
    graph = CodeKnowledgeGraph()
    if not repo.is_dir():
        return graph
    scripts: dict[str, str] = {}  # rel path -> entry-point id
    docstrings: dict[str, str] = {}
    texts: dict[str, str] = {}
    readme: Path | None = None
    artifacts: list[CkgEntity] = []
    for path in _repo_files(repo):
        rel = path.relative_to(repo).as_posix()
        if rel.lower() in ("readme.md", "readme.rst", "readme.txt", "readme") and readme is None:
            readme = path
        if path.suffix in MODEL_SUFFIXES:
            artifacts.append(CkgEntity(f"model-artifact:{rel}", EntityKind.MODEL_ARTIFACT, path.name, rel))
            continue
        if path.suffix not in SOURCE_SUFFIXES:
            if path.suffix in DATASET_SUFFIXES and not path.name.lower().startswith(("readme", "requirements")):
                artifacts.append(CkgEntity(f"dataset:{rel}", EntityKind.DATASET, path.name, rel))
            continue
        try:
            text = path.read_text(encoding="utf-8")
        except (UnicodeDecodeError, OSError) as exc:
            graph.warnings.append(f"{rel}: unreadable ({exc.__class__.__name__})")
            text = ""
        texts[rel] = text
        file_id = f"file:{rel}"
        doc = ""
        graph.add(CkgEntity(file_id, EntityKind.FILE, path.name, rel))
        if path.suffix == ".py":
            doc, _ = _python_defs(graph, rel, file_id, text)
        elif text:
            _other_defs(graph, rel, file_id, text)
        if doc:
            graph.entities[file_id] = CkgEntity(file_id, EntityKind.FILE, path.name, rel, None, _first_line(doc))
            docstrings[rel] = doc
        if text and _is_executable(path, text):
            eid = f"entry-point:{rel}"
            graph.add(CkgEntity(eid, EntityKind.ENTRY_POINT, rel, rel, None, _first_line(doc),
                                {"script": rel, "command": _default_command(rel)}))
            graph.link(file_id, eid, "contains")
            scripts[rel] = eid

    for art in artifacts:
        graph.add(art)
        for rel, text in texts.items():
            if art.name in text:
                graph.link(f"file:{rel}", art.id, "requires-artifact")

    documented: set[str] = set()
    if readme is not None:
        text = readme.read_text(encoding="utf-8", errors="replace")
        rel_readme = readme.relative_to(repo).as_posix()
        for heading, body in _readme_sections(text):
            commands = _fence_commands(body)
            if not commands or not heading:
                continue
            cap_id = f"capability:{ids.slug(heading)}"
            eps = []
            for cmd in commands:
                script = _script_of(cmd, scripts)
                if script is not None:
                    eid = scripts[script]
                    ent = graph.entities[eid]
                    attrs = dict(ent.attrs)
                    attrs.setdefault("documented", [])
                    if cmd not in attrs["documented"]:
                        attrs["documented"] = attrs["documented"] + [cmd]
                    graph.entities[eid] = CkgEntity(ent.id, ent.kind, ent.name, ent.location, ent.span,
                                                    ent.summary, attrs)
                    documented.add(script)
                else:
                    eid = f"entry-point:cmd:{ids.slug(cmd)}"
                    graph.add(CkgEntity(eid, EntityKind.ENTRY_POINT, cmd, rel_readme, None,
                                        _prose(body), {"command": cmd, "documented": [cmd]}))
                eps.append(eid)
            graph.add(CkgEntity(cap_id, EntityKind.CAPABILITY, heading, rel_readme, None, _prose(body),
                                {"commands": commands, "entry-points": sorted(set(eps))}))
            for eid in sorted(set(eps)):
                graph.link(cap_id, eid, "documents")
                script = graph.entities[eid].attrs.get("script")
                if script:
                    graph.link(f"file:{script}", cap_id, "implements-capability")

    for rel, eid in sorted(scripts.items()):
        if rel in documented or not docstrings.get(rel):
            continue
        title = _first_line(docstrings[rel]).rstrip(".")
        cap_id = f"capability:{ids.slug(title)}"
        if cap_id in graph.entities:
            cap_id = f"capability:{ids.slug(rel)}"
        command = graph.entities[eid].attrs["command"]
        graph.add(CkgEntity(cap_id, EntityKind.CAPABILITY, title, rel, None, " ".join(docstrings[rel].split()),
                            {"commands": [command], "entry-points": [eid]}))
        graph.link(cap_id, eid, "documents")
        graph.link(f"file:{rel}", cap_id, "implements-capability")
    return graph


def _default_command(rel: str) -> str:
    if rel.endswith(".py"):
        return f"python {rel}"
    if rel.endswith((".sh", ".bash")):
        return f"bash {rel}"
    return f"./{rel}"


def stem(token: str) -> str:
    for suffix in ("ing", "ed", "es", "er", "s"):
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            token = token[: -len(suffix)]
            break
    if len(token) > 3 and token[-1] == token[-2]:
        token = token[:-1]
    return token


def tokens(text: str) -> set[str]:
    return {stem(t) for t in _TOKEN.findall(text.lower()) if t not in STOPWORDS}


def _score(query: str, name: str, summary: str) -> int:
    q = tokens(query)
    score = len(q & tokens(f"{name} {summary}"))
    if score and query.strip().lower() == name.strip().lower():
        score += 2
    return score


def query_ckg(graph: CodeKnowledgeGraph, query: str) -> list[CkgEntity]:
    if not query.strip():
        return []
    scored = [(_score(query, e.name, e.summary), e.id) for e in graph.entities.values()]
    return [graph.entities[i] for s, i in sorted((x for x in scored if x[0] > 0), key=lambda x: (-x[0], x[1]))]


@dataclass(frozen=True)
class UsageTuple:
    query: str
    answer: str
    invocation: str = ""
    backing: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.answer.strip():
            raise AgentizerError("usage tuple answer must be non-empty")
        object.__setattr__(self, "backing", tuple(self.backing))

    def to_dict(self) -> dict[str, Any]:
        return {"query": self.query, "answer": self.answer, "invocation": self.invocation,
                "backing-entities": list(self.backing)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> UsageTuple:
        return cls(data["query"], data["answer"], data.get("invocation", ""), tuple(data.get("backing-entities", ())))


@dataclass
class UsageKB:
    tuples: list[UsageTuple] = field(default_factory=list)
    degraded: bool = False
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"tuples": [t.to_dict() for t in self.tuples], "degraded": self.degraded, "warnings": self.warnings}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> UsageKB:
        return cls([UsageTuple.from_dict(t) for t in data.get("tuples", ())], bool(data.get("degraded")),
                   list(data.get("warnings", ())))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> UsageKB:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def coverage_errors(self, graph: CodeKnowledgeGraph) -> list[str]:
        errors = [f"tuple {t.query!r} backs unknown entity {b}" for t in self.tuples for b in t.backing
                  if b not in graph.entities]
        covered = {b for t in self.tuples for b in t.backing}
        missing = [c.id for c in graph.of_kind(EntityKind.CAPABILITY) if c.id not in covered]
        if missing and not self.degraded:
            errors.append(f"capabilities without usage tuples: {missing}")
        return errors


def _help_transcript(entry: CkgEntity, toolbox) -> str:
    script = entry.attrs.get("script")
    if not script or toolbox is None:
        return ""
    result = toolbox.run_command(f"{_default_command(script)} --help", timeout=30)
    if result.exit_code != 0 or not result.stdout.strip():
        return ""
    return result.stdout.strip()


def build_usage_kb(graph: CodeKnowledgeGraph, history=None, planner=None, toolbox=None) -> UsageKB:
    """One tuple per capability, backed by help transcripts and the planner's answer.

    ``history`` is the finished root trajectory (or None); its completed
    operations become a setup tuple.
    """
    kb = UsageKB()
    caps = graph.of_kind(EntityKind.CAPABILITY)
    if not caps:
        kb.warnings.append("no capability entities; usage knowledge base is empty")
        log.warning(kb.warnings[-1])
    for cap in caps:
        eps = [graph.entities[e] for e in cap.attrs.get("entry-points", ()) if e in graph.entities]
        commands = list(cap.attrs.get("commands", ()))
        help_texts = [h for h in (_help_transcript(e, toolbox) for e in eps) if h]
        context = Context(tuple(
            [ContextItem(ContextKind.DOC_SLICE, f"{cap.name}: {cap.summary or cap.name}", cap.id)]
            + [ContextItem(ContextKind.COMMAND, c, cap.id) for c in commands]
            + [ContextItem(ContextKind.COMMAND_OUTPUT, h, cap.id) for h in help_texts]
        ))
        answer = ""
        if planner is not None:
            try:
                answer = str(planner.answer_usage(cap.name, context)["answer"])
            except AgentizerError as exc:
                kb.degraded = True
                kb.warnings.append(f"{cap.id}: planner gave no answer ({exc.code}); using CKG summary")
                log.warning(kb.warnings[-1])
        else:
            kb.degraded = True
        if not answer:
            answer = cap.summary or cap.name
        if commands:
            answer += "\n\nInvoke:\n" + "\n".join(f"  {c}" for c in commands)
        if help_texts:
            answer += "\n\nHelp:\n" + "\n\n".join(help_texts)
        query = f"{cap.name}. {cap.summary}".strip() if cap.summary else cap.name
        kb.tuples.append(UsageTuple(query, answer, commands[0] if commands else "",
                                    (cap.id, *[e.id for e in eps])))
    if history is not None:
        steps = []
        for t in history.walk():
            for nid in t.graph.ordered_ids():
                node = t.graph.nodes[nid]
                if node.operation is not None and node.subtrajectory is None:
                    steps.append(f"- {node.goal.text}: {node.operation.tool} {json.dumps(dict(node.operation.arguments), sort_keys=True)}")
        if steps:
            kb.tuples.append(UsageTuple("How was the environment set up? setup install configure",
                                        "Setup steps executed during agentization:\n" + "\n".join(steps)))
    return kb


def answer_query(kb: UsageKB, query: str, threshold: int = 1) -> UsageTuple | None:
    """Best tuple by token overlap with its query; None (not found) below ``threshold``."""
    if not query.strip():
        return None
    for t in kb.tuples:
        if t.query.strip().lower() == query.strip().lower():
            return t
    best = None
    for t in kb.tuples:
        s = _score(query, t.query, "")
        if s >= threshold and (best is None or s > best[0]):
            best = (s, t)
    return best[1] if best else None


def ckg_path(workspace: str | Path) -> Path:
    return Path(workspace) / META_DIR / "ckg.json"


def kb_path(workspace: str | Path) -> Path:
    return Path(workspace) / META_DIR / "usage-kb.json"


def _build_handler(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    graph = build_ckg(ctx.toolbox.workspace)
    path = graph.save(ckg_path(ctx.toolbox.workspace))
    counts = {k.value: len(graph.of_kind(k)) for k in EntityKind}
    summary = "code knowledge graph: " + ", ".join(f"{v} {k}" for k, v in counts.items() if v)
    return ToolResult.success([ContextItem(ContextKind.DOC_SLICE, summary, ctx.node_id)], artifacts=[path],
                              counts=counts)


def _query_handler(args: Mapping[str, Any], ctx: ToolContext) -> ToolResult:
    path = ckg_path(ctx.toolbox.workspace)
    graph = CodeKnowledgeGraph.load(path) if path.is_file() else build_ckg(ctx.toolbox.workspace)
    hits = query_ckg(graph, args["query"])[: int(args.get("limit") or 5)]
    if not hits:
        return ToolResult.success([], hits=[])
    lines = "\n".join(f"{e.id} ({e.location}): {e.summary or e.name}" for e in hits)
    return ToolResult.success([ContextItem(ContextKind.DOC_SLICE, f"CKG matches for {args['query']!r}:\n{lines}",
                                           ctx.node_id)], hits=[e.id for e in hits])


def register(registry: ToolRegistry) -> None:
    registry.register(
        ToolSpec("ckg-build", "Build the code knowledge graph of the workspace repository.", {},
                 side_effecting=True, category="ckg"),
        _build_handler,
    )
    registry.register(
        ToolSpec("ckg-query", "Rank code knowledge graph entities against a text query.",
                 {"query": ArgSpec("string", True), "limit": ArgSpec("integer")},
                 side_effecting=False, category="ckg"),
        _query_handler,
    )


__all__ = [
    "CkgEdge",
    "CkgEntity",
    "CodeKnowledgeGraph",
    "EntityKind",
    "UsageKB",
    "UsageTuple",
    "answer_query",
    "build_ckg",
    "build_usage_kb",
    "query_ckg",
]
