"""FIFO worklist scheduler with parallel workers and in-order commit.

The coordinator walks the queue exactly like a serial PopFront/PushBack
loop; results are committed (state change, context merge, child creation)
strictly in that serial order. Workers may execute ready nodes ahead of
the queue front, but since a node is dispatched only once every predecessor
has been *committed* done, its execution sees the same inputs it would see
serially. This is what makes a parallel run's final state identical to a
serial one.
"""

from __future__ import annotations

import threading
from collections import deque
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from typing import Any, Callable, Iterable

from agentizer.errors import IllegalTransition, LivelockDetected, StepBudgetExceeded
from agentizer.graph import ResourceCaps, TaskGraph, blocked, dispatch_parallel, pre_satisfied
from agentizer.model import Node, NodeState, transition_state
from agentizer.runlog import RunLog

FATAL = (StepBudgetExceeded, LivelockDetected, IllegalTransition)


class StepBudget:
    """Global cap on node executions, shared across nested trajectories."""

    def __init__(self, max_steps: int):
        self.max_steps = max_steps
        self.used = 0
        self._lock = threading.Lock()

    def try_take(self) -> bool:
        with self._lock:
            if self.used >= self.max_steps:
                return False
            self.used += 1
            return True

    @property
    def remaining(self) -> int:
        with self._lock:
            return self.max_steps - self.used


class Failure:
    """Wraps an exception raised by a worker so the coordinator can commit it."""

    def __init__(self, error: BaseException):
        self.error = error

    def __repr__(self) -> str:
        return f"Failure({self.error!r})"


Execute = Callable[[Node], Any]
Commit = Callable[[Node, Any], Iterable[str]]


class Scheduler:
    def __init__(
        self,
        graph: TaskGraph,
        *,
        execute: Execute,
        commit: Commit,
        caps: ResourceCaps | None = None,
        budget: StepBudget | None = None,
        log: RunLog | None = None,
        workspace=None,
        counts_step: Callable[[Node], bool] = lambda node: True,
    ):
        self.graph = graph
        self.execute = execute
        self.commit = commit
        self.caps = caps or ResourceCaps()
        self.budget = budget or StepBudget(200)
        self.log = log if log is not None else RunLog()
        self.workspace = workspace
        self.counts_step = counts_step
        # Realized (start, completion) sequence, for schedule-validity audits.
        self.trace: list[tuple[str, str]] = []

    def _ready_candidates(self, queue: deque, inflight: dict[str, Future]) -> list[str]:
        out = []
        for nid in queue:
            node = self.graph.nodes[nid]
            if (
                nid not in inflight
                and node.state is NodeState.PENDING
                and pre_satisfied(self.graph, nid, self.workspace)
            ):
                out.append(nid)
        return out

    def _fill(self, pool: ThreadPoolExecutor, queue: deque, inflight: dict[str, Future]) -> None:
        candidates = self._ready_candidates(queue, inflight)
        if not candidates:
            return
        # Finished-but-uncommitted results no longer hold capacity.
        running = [n for n, f in inflight.items() if not f.done()]
        for nid in dispatch_parallel(self.graph, candidates, self.caps, running):
            node = self.graph.nodes[nid]
            if self.counts_step(node) and not self.budget.try_take():
                break
            transition_state(node, NodeState.RUNNING, self.log)
            self.trace.append(("start", nid))
            inflight[nid] = pool.submit(self._guarded, node)

    def _guarded(self, node: Node) -> Any:
        try:
            return self.execute(node)
        except BaseException as exc:  # noqa: BLE001 - handed to the coordinator
            return Failure(exc)

    def run(self, initial: Iterable[str]) -> None:
        queue = deque(initial)
        inflight: dict[str, Future] = {}
        streak = 0
        pool = ThreadPoolExecutor(max_workers=self.caps.parallelism, thread_name_prefix="agentizer")
        try:
            while queue:
                nid = queue[0]
                node = self.graph.nodes[nid]
                if nid in inflight:
                    fut = inflight[nid]
                    while not fut.done():
                        wait(_running(inflight), return_when=FIRST_COMPLETED)
                        self._fill(pool, queue, inflight)
                    result = inflight.pop(nid).result()
                    queue.popleft()
                    self.trace.append(("complete", nid))
                    if isinstance(result, Failure) and isinstance(result.error, FATAL):
                        raise result.error
                    queue.extend(self.commit(node, result))
                    streak = 0
                    continue
                if node.state is not NodeState.PENDING:
                    queue.popleft()
                    continue
                if blocked(self.graph, nid):
                    queue.popleft()
                    self.log.append(nid, "deferred", {"reason": "predecessor failed"})
                    streak = 0
                    continue
                if not pre_satisfied(self.graph, nid, self.workspace):
                    queue.rotate(-1)
                    self.log.append(nid, "deferred", {"reason": "pre-predicate unsatisfied"})
                    streak += 1
                    if streak >= len(queue):
                        raise LivelockDetected(
                            f"every queued node deferred for a full cycle ({len(queue)} nodes)"
                        )
                    continue
                self._fill(pool, queue, inflight)
                if nid not in inflight:
                    running = _running(inflight)
                    if not running:
                        raise StepBudgetExceeded(
                            f"node executions reached max-steps={self.budget.max_steps}"
                        )
                    wait(running, return_when=FIRST_COMPLETED)
        finally:
            pool.shutdown(wait=True, cancel_futures=True)


def _running(inflight: dict[str, Future]) -> list[Future]:
    return [f for f in inflight.values() if not f.done()]
