"""Sender-initiated load sharing, simulated as the comparison arm.

One node acts as the sender: before every dispatch it polls each other node for
its load (sequentially, a configurable simulated latency per query), then hands
the job to the least-loaded node, itself included, with ties broken by node id.
Discovery time is charged to the job's wait. Nodes reuse the same priority
pools and weighted-slice engine as the real processors, so with zero query
latency the two pipelines produce identical timings and the comparison isolates
discovery overhead.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .clock import VirtualClock
from .model import JobRecord, JobStatus, SchedulingPolicy
from .processor import PoolConfig, PoolEngine
from .workload import DEFAULT_CHUNK_BUDGET, build_run

logger = logging.getLogger(__name__)

DEFAULT_RETRY_BACKOFF_MS = 100


@dataclass(frozen=True)
class BaselineConfig:
    node_count: int
    per_query_latency_ms: int
    capacity: int = 10
    weights: dict[int, int] = field(default_factory=lambda: {0: 1, 1: 2})
    throughput_slices_per_ms: int = 10
    chunk_budget: int = DEFAULT_CHUNK_BUDGET
    poll_interval_ms: int = 10
    submit_at_ms: int = 0
    load_threshold: int | None = None
    retry_backoff_ms: int = DEFAULT_RETRY_BACKOFF_MS
    max_ticks: int = 2_000_000

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ValueError("at least one node is required")
        if self.per_query_latency_ms < 0:
            raise ValueError("per-query latency must be non-negative")
        if self.retry_backoff_ms < 1:
            raise ValueError("retry backoff must be at least 1 ms")


@dataclass(frozen=True)
class StatusQueryExchange:
    """One round of load discovery: the requester polls each responder in turn,
    paying per_query_latency_ms per responder."""

    requester: str
    responders: tuple[str, ...]
    per_query_latency_ms: int

    @property
    def discovery_delay_ms(self) -> int:
        return len(self.responders) * self.per_query_latency_ms


def sender_dispatch(
    node_loads: Sequence[tuple[str, int]],
    per_query_latency_ms: int,
    *,
    load_threshold: int | None = None,
) -> tuple[str | None, int]:
    """One discovery round: query every node but the sender, pick the least
    loaded overall (id tie-break). Returns (target, discovery_delay_ms); the
    target is None when every node is over the acceptance threshold."""
    if not node_loads:
        raise ValueError("at least one node is required")
    sender_id = node_loads[0][0]
    exchange = StatusQueryExchange(
        requester=sender_id,
        responders=tuple(node_id for node_id, _ in node_loads if node_id != sender_id),
        per_query_latency_ms=per_query_latency_ms,
    )
    delay = exchange.discovery_delay_ms
    load, target = min((load, node_id) for node_id, load in node_loads)
    if load_threshold is not None and load > load_threshold:
        return None, delay
    return target, delay


class _Job:
    __slots__ = ("job_id", "priority", "run", "node_id", "started_at", "finished_at", "result", "error")

    def __init__(self, job_id: str, priority: int, run) -> None:
        self.job_id = job_id
        self.priority = priority
        self.run = run
        self.node_id: str | None = None
        self.started_at: int | None = None
        self.finished_at: int | None = None
        self.result = None
        self.error: str | None = None


class _Node:
    def __init__(self, node_id: str, config: BaselineConfig) -> None:
        self.id = node_id
        pools = {level: PoolConfig(capacity=config.capacity, weight=w) for level, w in config.weights.items()}
        self.engine = PoolEngine(
            pools,
            throughput_slices_per_ms=config.throughput_slices_per_ms,
            chunk_budget=config.chunk_budget,
            start_at=0,
        )

    def admit(self, job: _Job, now: int) -> None:
        job.node_id = self.id
        placement = self.engine.admit(job.job_id, job.priority, job.run, context=job, now=now)
        if placement == "running":
            job.started_at = now

    def step(self, now: int) -> int:
        finished = 0
        report = self.engine.step(now)
        for start in report.started:
            start.context.started_at = start.at
        for done in report.completed:
            job = done.context
            job.finished_at = done.at
            if done.ok:
                job.result = done.result
            else:
                job.error = done.error
            finished += 1
        return finished


class _Sender:
    """Serialized dispatch: one discovery round at a time, like a node that must
    stop processing to query its peers."""

    def __init__(self, nodes: Sequence[_Node], config: BaselineConfig) -> None:
        self._nodes = nodes
        self._config = config
        self._pending: deque[_Job] = deque()
        self._aware = False
        self._next_poll_at = 0
        self._phase = "idle"  # idle | discover | backoff
        self._busy_until = 0
        self._current: _Job | None = None

    def submit(self, jobs: Sequence[_Job]) -> None:
        self._pending.extend(jobs)

    @property
    def idle(self) -> bool:
        return self._phase == "idle" and not self._pending

    def step(self, now: int) -> None:
        if now >= self._next_poll_at:
            self._next_poll_at = now + self._config.poll_interval_ms
            if self._pending:
                self._aware = True
        if not self._aware:
            return
        while True:
            if self._phase == "discover":
                if now < self._busy_until:
                    return
                self._finish_round(now)
            elif self._phase == "backoff":
                if now < self._busy_until:
                    return
                self._phase = "discover"
                self._busy_until = now + (len(self._nodes) - 1) * self._config.per_query_latency_ms
            elif self._pending:
                self._current = self._pending.popleft()
                self._phase = "discover"
                self._busy_until = now + (len(self._nodes) - 1) * self._config.per_query_latency_ms
            else:
                return

    def _finish_round(self, now: int) -> None:
        loads = [(node.id, node.engine.load) for node in self._nodes]
        target, _ = sender_dispatch(
            loads, self._config.per_query_latency_ms, load_threshold=self._config.load_threshold
        )
        if target is None:
            self._phase = "backoff"
            self._busy_until = now + self._config.retry_backoff_ms
            return
        node = next(n for n in self._nodes if n.id == target)
        node.admit(self._current, now)
        self._current = None
        self._phase = "idle"


def run_sender_baseline(
    priority_stream: Sequence[int],
    workload_kind: str,
    workload_params: Mapping[str, Any],
    config: BaselineConfig,
) -> list[JobRecord]:
    """Simulate the sender-initiated cluster over a virtual clock and return
    completed job records with the same timing semantics as the real pipeline."""
    clock = VirtualClock()
    nodes = [_Node(f"N{i + 1}", config) for i in range(config.node_count)]
    sender = _Sender(nodes, config)
    jobs = [
        _Job(f"J-{i + 1:06d}", priority, build_run(workload_kind, workload_params))
        for i, priority in enumerate(priority_stream)
    ]

    submitted = False
    finished = 0
    ticks = 0
    while True:
        now = clock.now_ms()
        if not submitted and now >= config.submit_at_ms:
            sender.submit(jobs)
            submitted = True
        sender.step(now)
        for node in nodes:
            finished += node.step(now)
        ticks += 1
        if submitted and finished == len(jobs):
            break
        if ticks >= config.max_ticks:
            raise RuntimeError(f"baseline run did not finish within {config.max_ticks} ticks")
        clock.advance(1)

    records = []
    for job in jobs:
        wait = job.started_at - config.submit_at_ms
        processing = job.finished_at - job.started_at
        records.append(
            JobRecord(
                id=job.job_id,
                definition_id="baseline",
                priority=job.priority,
                policy=SchedulingPolicy.least_load(),
                status=JobStatus.COMPLETED if job.error is None else JobStatus.FAILED,
                submitted_at=config.submit_at_ms,
                target=job.node_id,
                started_at=job.started_at,
                finished_at=job.finished_at,
                wait_ms=wait,
                processing_ms=processing,
                total_ms=wait + processing,
                result_payload=job.result.to_payload() if job.result else None,
                error=job.error,
            )
        )
    return records
