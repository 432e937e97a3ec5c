"""Task DAG, resource capacities, run limits and the pure scheduling helpers."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from agentizer.errors import CycleDetected, InvalidDemand, PreconditionError, UnknownNode
from agentizer.model import Node, NodeState


@dataclass(frozen=True)
class ResourceCaps:
    capacities: Mapping[str, int] = field(default_factory=dict)
    parallelism: int = 1

    def __post_init__(self):
        if self.parallelism < 1:
            raise PreconditionError("parallelism must be a positive integer")
        for rtype, cap in self.capacities.items():
            if cap <= 0:
                raise PreconditionError(f"capacity for {rtype!r} must be strictly positive")
        object.__setattr__(self, "capacities", dict(self.capacities))

    def admits(self, demands: Mapping[str, int]) -> bool:
        return all(q <= self.capacities.get(r, q) for r, q in demands.items())


@dataclass(frozen=True)
class RunLimits:
    max_steps: int = 200
    max_retries: int = 10

    def __post_init__(self):
        if self.max_steps < 1:
            raise PreconditionError("max-steps must be a positive integer")
        if self.max_retries < 0:
            raise PreconditionError("max-retries must be non-negative")


class TaskGraph:
    """A DAG of nodes; every edge insertion is cycle-checked.

    Nodes remember their creation ordinal, which is the deterministic
    tie-break used by :func:`topological_order` and :func:`dispatch_parallel`.
    """

    def __init__(self, caps: ResourceCaps | None = None):
        self.nodes: dict[str, Node] = {}
        self.edges: set[tuple[str, str]] = set()
        self.root: str | None = None
        self.caps = caps
        self._ordinal: dict[str, int] = {}
        self._succ: dict[str, list[str]] = {}
        self._pred: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def add_node(self, node: Node, parent: str | None = None) -> Node:
        if node.id in self.nodes:
            raise PreconditionError(f"duplicate node id {node.id}")
        if parent is not None and parent not in self.nodes:
            raise UnknownNode(f"unknown parent node {parent}")
        if self.caps is not None and not self.caps.admits(node.resource_demands):
            raise InvalidDemand(
                f"node {node.id} demands {node.resource_demands} beyond capacities {self.caps.capacities}"
            )
        self.nodes[node.id] = node
        self._ordinal[node.id] = len(self._ordinal)
        self._succ[node.id] = []
        self._pred[node.id] = []
        if self.root is None:
            self.root = node.id
        if parent is not None:
            self.add_edge(parent, node.id)
        return node

    def ordinal(self, node_id: str) -> int:
        return self._ordinal[node_id]

    def predecessors(self, node_id: str) -> list[str]:
        return list(self._pred[node_id])

    def successors(self, node_id: str) -> list[str]:
        return list(self._succ[node_id])

    def has_path(self, src: str, dst: str) -> bool:
        stack, seen = [src], set()
        while stack:
            cur = stack.pop()
            if cur == dst:
                return True
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(self._succ[cur])
        return False

    def add_edge(self, src: str, dst: str) -> TaskGraph:
        for nid in (src, dst):
            if nid not in self.nodes:
                raise UnknownNode(f"unknown node {nid}")
        if (src, dst) in self.edges:
            return self
        if src == dst or self.has_path(dst, src):
            raise CycleDetected(f"edge {src} -> {dst} would close a cycle")
        self.edges.add((src, dst))
        self._succ[src].append(dst)
        self._pred[dst].append(src)
        return self

    def roots(self) -> list[str]:
        return [n for n in self.ordered_ids() if not self._pred[n]]

    def ordered_ids(self) -> list[str]:
        return sorted(self.nodes, key=self._ordinal.__getitem__)

    def validate(self) -> None:
        roots = self.roots()
        if self.nodes and roots != [self.root]:
            raise PreconditionError(f"graph must have exactly one root, found {roots}")

    def shape(self) -> dict[str, Any]:
        """Scheduling-independent summary used for equivalence checks."""
        return {
            "nodes": {nid: n.state.value for nid, n in sorted(self.nodes.items())},
            "edges": sorted(self.edges),
            "root": self.root,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "root": self.root,
            "nodes": [self.nodes[n].to_dict() for n in self.ordered_ids()],
            "edges": [list(e) for e in sorted(self.edges, key=lambda e: (self._ordinal[e[1]], self._ordinal[e[0]]))],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], caps: ResourceCaps | None = None) -> TaskGraph:
        graph = cls(caps)
        for nd in data.get("nodes", ()):
            graph.add_node(Node.from_dict(nd))
        graph.root = data.get("root", graph.root)
        for src, dst in data.get("edges", ()):
            graph.add_edge(src, dst)
        return graph

    def to_dot(self, name: str = "plan") -> str:
        lines = [f'digraph "{name}" {{', "  rankdir=TB;"]
        for nid in self.ordered_ids():
            node = self.nodes[nid]
            label = node.goal.text.replace('"', "'")
            lines.append(f'  "{nid}" [label="{label}\\n[{node.state.value}]"];')
        for src, dst in sorted(self.edges):
            lines.append(f'  "{src}" -> "{dst}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def add_edge(graph: TaskGraph, src: str, dst: str) -> TaskGraph:
    return graph.add_edge(src, dst)


def topological_order(graph: TaskGraph) -> list[str]:
    """Kahn's algorithm; ready ties are broken by creation ordinal."""
    indeg = {nid: len(graph._pred[nid]) for nid in graph.nodes}
    heap = [(graph.ordinal(n), n) for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, nid = heapq.heappop(heap)
        order.append(nid)
        for succ in graph._succ[nid]:
            indeg[succ] -= 1
            if indeg[succ] == 0:
                heapq.heappush(heap, (graph.ordinal(succ), succ))
    return order


def inputs_present(node: Node, workspace: str | Path | None) -> bool:
    if not node.goal.inputs:
        return True
    base = Path(workspace) if workspace is not None else Path.cwd()
    return all((base / p).exists() for p in node.goal.inputs)


def pre_satisfied(graph: TaskGraph, node_id: str, workspace: str | Path | None = None) -> bool:
    """The fixed pre-predicate: all predecessors done and declared inputs exist."""
    if any(graph.nodes[p].state is not NodeState.DONE for p in graph._pred[node_id]):
        return False
    return inputs_present(graph.nodes[node_id], workspace)


def blocked(graph: TaskGraph, node_id: str) -> bool:
    """True when some ancestor failed; such a node can never become ready."""
    stack, seen = list(graph._pred[node_id]), set()
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        if graph.nodes[nid].state is NodeState.FAILED:
            return True
        stack.extend(graph._pred[nid])
    return False


def ready_set(graph: TaskGraph, env=None) -> set[str]:
    workspace = getattr(env, "workspace_root", None)
    return {
        nid
        for nid, node in graph.nodes.items()
        if node.state is NodeState.PENDING and pre_satisfied(graph, nid, workspace)
    }


def dispatch_parallel(
    graph: TaskGraph,
    ready: Iterable[str],
    caps: ResourceCaps,
    busy: Iterable[str] = (),
) -> list[str]:
    """Greedy maximal subset of ``ready`` fitting the free capacity.

    ``busy`` nodes are already executing and hold their demands. The result
    is in tie-break (creation ordinal) order.
    """
    busy = list(busy)
    used: dict[str, int] = {}
    for nid in busy:
        for r, q in graph.nodes[nid].resource_demands.items():
            used[r] = used.get(r, 0) + q
    slots = caps.parallelism - len(busy)
    selected: list[str] = []
    for nid in sorted(set(ready), key=graph.ordinal):
        if len(selected) >= slots:
            break
        demands = graph.nodes[nid].resource_demands
        if all(used.get(r, 0) + q <= caps.capacities.get(r, float("inf")) for r, q in demands.items()):
            selected.append(nid)
            for r, q in demands.items():
                used[r] = used.get(r, 0) + q
    return selected
