"""Job processor: priority worker pools, a weighted-slice execution engine, and
the queue-consumer loop that ties them to the broker.

Thread priorities are replaced by cooperative weighted time-slicing: workloads
run as resumable chunks and each scheduling round grants running jobs compute
slices in proportion to their pool's weight (defaults HIGH=2, LOW=1). That
keeps the priority behaviour deterministic and independent of the host OS. The
engine is also used standalone by the sender-initiated baseline, which is what
makes the two pipelines comparable.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

from .broker import BrokerError, Delivery, ExpiredTagError, MessageBroker
from .clock import Clock
from .model import (
    JobId,
    Message,
    MessageKind,
    Priority,
    ProcessorId,
    ProcessorInfo,
    STATUS_QUEUE,
    TERMINAL_STATUSES,
    JobStatus,
    dispatch_queue_name,
    heartbeat_payload,
    job_status_payload,
    progress_payload,
)
from .repository import Repository, UnknownJobError
from .workload import DEFAULT_CHUNK_BUDGET, PrimeResult, PrimeRun, build_run

logger = logging.getLogger(__name__)

DEFAULT_POOL_CAPACITY = 10
DEFAULT_POLL_INTERVAL_MS = 10
DEFAULT_HEARTBEAT_INTERVAL_MS = 500
DEFAULT_PROGRESS_INTERVAL_MS = 1000
DEFAULT_THROUGHPUT_SLICES_PER_MS = 10


class UnknownPriorityError(Exception):
    """The job's priority level has no configured pool."""


@dataclass(frozen=True)
class PoolConfig:
    capacity: int = DEFAULT_POOL_CAPACITY
    weight: int = 1

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("pool capacity must be positive")
        if self.weight < 1:
            raise ValueError("pool weight must be positive")


def default_pools(capacity: int = DEFAULT_POOL_CAPACITY) -> dict[int, PoolConfig]:
    return {
        int(Priority.LOW): PoolConfig(capacity=capacity, weight=1),
        int(Priority.HIGH): PoolConfig(capacity=capacity, weight=2),
    }


class _Slot:
    __slots__ = ("job_id", "level", "run", "started_at", "remainder", "context")

    def __init__(self, job_id: JobId, level: int, run: PrimeRun, started_at: int, context: Any) -> None:
        self.job_id = job_id
        self.level = level
        self.run = run
        self.started_at = started_at
        self.remainder = 0
        self.context = context


class _Pending:
    __slots__ = ("job_id", "run", "context")

    def __init__(self, job_id: JobId, run: PrimeRun, context: Any) -> None:
        self.job_id = job_id
        self.run = run
        self.context = context


class PriorityWorkerPool:
    """Fixed-capacity set of running jobs plus a FIFO backlog, sharing one
    compute weight. Backlog drains FIFO into free slots."""

    def __init__(self, level: int, config: PoolConfig) -> None:
        self.level = level
        self.capacity = config.capacity
        self.weight = config.weight
        self.running: list[_Slot] = []
        self.backlog: deque[_Pending] = deque()

    @property
    def load(self) -> int:
        return len(self.running) + len(self.backlog)

    def has_slot(self) -> bool:
        return len(self.running) < self.capacity


@dataclass(frozen=True)
class StartEvent:
    job_id: JobId
    at: int
    context: Any


@dataclass(frozen=True)
class CompletionEvent:
    job_id: JobId
    at: int
    context: Any
    ok: bool
    result: PrimeResult | None = None
    error: str | None = None


@dataclass
class EngineReport:
    started: list[StartEvent] = field(default_factory=list)
    completed: list[CompletionEvent] = field(default_factory=list)


class PoolEngine:
    """Cooperative weighted slicer over a set of priority pools.

    Each step, every running job accrues credit throughput*weight per elapsed
    millisecond and spends it in whole slices of ``chunk_budget`` candidates;
    the credit denominator is the summed weight of running jobs, so per-job
    slice rates keep the configured weight ratio whenever pools are saturated.
    """

    def __init__(
        self,
        pools: Mapping[int, PoolConfig] | None = None,
        *,
        throughput_slices_per_ms: int = DEFAULT_THROUGHPUT_SLICES_PER_MS,
        chunk_budget: int = DEFAULT_CHUNK_BUDGET,
        start_at: int = 0,
    ) -> None:
        configs = pools if pools is not None else default_pools()
        if not configs:
            raise ValueError("at least one pool is required")
        self._pools = {int(level): PriorityWorkerPool(int(level), cfg) for level, cfg in configs.items()}
        self._pools_desc = [self._pools[level] for level in sorted(self._pools, reverse=True)]
        self.throughput = throughput_slices_per_ms
        self.chunk_budget = chunk_budget
        self._last_step_at = start_at

    @property
    def load(self) -> int:
        return sum(pool.load for pool in self._pools_desc)

    def pool(self, level: int) -> PriorityWorkerPool:
        return self._pools[level]

    def pool_levels(self) -> list[int]:
        return sorted(self._pools)

    def total_capacity(self) -> int:
        return sum(p.capacity for p in self._pools_desc)

    def running_slots(self) -> Iterator[_Slot]:
        for pool in self._pools_desc:
            yield from pool.running

    def admit(self, job_id: JobId, level: int, run: PrimeRun, context: Any, now: int) -> str:
        """Place the job in its priority pool; returns "running" or "backlog"."""
        pool = self._pools.get(int(level))
        if pool is None:
            raise UnknownPriorityError(f"no pool configured for priority level {level}")
        if pool.has_slot():
            pool.running.append(_Slot(job_id, pool.level, run, started_at=now, context=context))
            return "running"
        pool.backlog.append(_Pending(job_id, run, context))
        return "backlog"

    def step(self, now: int) -> EngineReport:
        report = EngineReport()
        delta = now - self._last_step_at
        self._last_step_at = now

        # expire fixed-duration jobs before granting more compute
        for pool in self._pools_desc:
            expired = [
                s
                for s in pool.running
                if s.run.time_limit_ms is not None and now - s.started_at >= s.run.time_limit_ms
            ]
            for slot in expired:
                slot.run.mark_finished()
                pool.running.remove(slot)
                report.completed.append(
                    CompletionEvent(slot.job_id, now, slot.context, ok=True, result=slot.run.result())
                )

        if delta > 0:
            total_weight = sum(pool.weight * len(pool.running) for pool in self._pools_desc)
            if total_weight > 0:
                budget = self.throughput * delta
                for pool in self._pools_desc:
                    for slot in list(pool.running):
                        slot.remainder += budget * pool.weight
                        grants = slot.remainder // total_weight
                        slot.remainder -= grants * total_weight
                        for _ in range(grants):
                            try:
                                finished = slot.run.run_chunk(self.chunk_budget)
                            except Exception as exc:  # workload bug: fail the job, keep the pool alive
                                pool.running.remove(slot)
                                report.completed.append(
                                    CompletionEvent(slot.job_id, now, slot.context, ok=False, error=str(exc))
                                )
                                break
                            if finished:
                                pool.running.remove(slot)
                                report.completed.append(
                                    CompletionEvent(slot.job_id, now, slot.context, ok=True, result=slot.run.result())
                                )
                                break

        for pool in self._pools_desc:
            while pool.has_slot() and pool.backlog:
                pending = pool.backlog.popleft()
                slot = _Slot(pending.job_id, pool.level, pending.run, started_at=now, context=pending.context)
                pool.running.append(slot)
                report.started.append(StartEvent(pending.job_id, now, pending.context))

        return report


class Processor:
    """Consumes its dispatch queue, executes jobs through the pool engine, and
    reports progress, status and heartbeats on the status queue."""

    def __init__(
        self,
        processor_id: ProcessorId,
        repository: Repository,
        broker: MessageBroker,
        clock: Clock,
        *,
        pools: Mapping[int, PoolConfig] | None = None,
        cost_factor: float = 1.0,
        poll_interval_ms: int = DEFAULT_POLL_INTERVAL_MS,
        heartbeat_interval_ms: int = DEFAULT_HEARTBEAT_INTERVAL_MS,
        progress_interval_ms: int = DEFAULT_PROGRESS_INTERVAL_MS,
        throughput_slices_per_ms: int = DEFAULT_THROUGHPUT_SLICES_PER_MS,
        chunk_budget: int = DEFAULT_CHUNK_BUDGET,
    ) -> None:
        self.id = processor_id
        self._repo = repository
        self._broker = broker
        self._clock = clock
        self._cost_factor = cost_factor
        self._poll_interval_ms = poll_interval_ms
        self._heartbeat_interval_ms = heartbeat_interval_ms
        self._progress_interval_ms = progress_interval_ms
        pool_configs = dict(pools) if pools is not None else default_pools()
        self._engine = PoolEngine(
            pool_configs,
            throughput_slices_per_ms=throughput_slices_per_ms,
            chunk_budget=chunk_budget,
            start_at=clock.now_ms(),
        )
        self._pool_configs = pool_configs
        self._queue_name = dispatch_queue_name(processor_id)
        self._active_tags: dict[JobId, str] = {}
        self._next_poll_at = 0
        self._next_heartbeat_at = 0

    @property
    def dispatch_queue(self) -> str:
        return self._queue_name

    @property
    def current_load(self) -> int:
        return self._engine.load

    @property
    def engine(self) -> PoolEngine:
        return self._engine

    def register(self) -> None:
        """Create the dispatch queue and the registry entry. The processor only
        becomes selectable once its first heartbeat reaches the repository."""
        capacities = {level: cfg.capacity for level, cfg in self._pool_configs.items()}
        per_priority = max(capacities.values())
        info = ProcessorInfo(
            id=self.id,
            pool_capacity_per_priority=per_priority,
            cost_factor=self._cost_factor,
        )
        self._repo.register_processor(info, pool_capacity_total=sum(capacities.values()))
        if not self._broker.has_queue(self._queue_name):
            self._broker.create_queue(self._queue_name, durable=True)

    def step(self, now: int) -> None:
        if now >= self._next_poll_at:
            self._next_poll_at = now + self._poll_interval_ms
            self._drain_dispatch_queue(now)
        report = self._engine.step(now)
        for start in report.started:
            self._on_started(start.job_id, start.context, start.at)
        for done in report.completed:
            self._on_completed(done, now)
        self._emit_progress(now)
        if now >= self._next_heartbeat_at:
            self._next_heartbeat_at = now + self._heartbeat_interval_ms
            self._emit_heartbeat(now)

    # -- queue consumption ---------------------------------------------------

    def _drain_dispatch_queue(self, now: int) -> None:
        while True:
            delivery = self._broker.dequeue(self._queue_name, consumer=self.id)
            if delivery is None:
                return
            self._admit(delivery, now)

    def _admit(self, delivery: Delivery, now: int) -> None:
        payload = delivery.message.payload
        job_id: JobId = payload["job_id"]
        if job_id in self._active_tags:
            # redelivery of a job this processor already holds: adopt the new
            # live tag so the message stays in flight until the job finishes
            self._active_tags[job_id] = delivery.delivery_tag
            return
        try:
            record = self._repo.get_job(job_id)
        except UnknownJobError:
            logger.warning("processor %s: request for unknown job %s dropped", self.id, job_id)
            self._safe_ack(delivery.delivery_tag)
            return
        if record.status in TERMINAL_STATUSES:
            self._safe_ack(delivery.delivery_tag)
            return
        level = int(payload["priority"])
        defn = self._repo.get_definition(payload["definition_id"])
        run = build_run(defn.workload_kind, defn.workload_params)
        context = {"tag": delivery.delivery_tag, "next_progress_at": 0}
        try:
            placement = self._engine.admit(job_id, level, run, context, now)
        except UnknownPriorityError as exc:
            # the closed lifecycle has no direct SCHEDULED->FAILED edge, so a
            # validation reject is an instant start-and-fail at pickup time
            self._emit_status(job_id, JobStatus.IN_PROGRESS, now)
            self._emit_status(job_id, JobStatus.FAILED, now, error=str(exc))
            self._safe_ack(delivery.delivery_tag)
            return
        self._active_tags[job_id] = delivery.delivery_tag
        if placement == "running":
            self._on_started(job_id, context, now)

    # -- engine event handling ---------------------------------------------------

    def _on_started(self, job_id: JobId, context: dict[str, Any], at: int) -> None:
        context["next_progress_at"] = at + self._progress_interval_ms
        self._emit_status(job_id, JobStatus.IN_PROGRESS, at)

    def _on_completed(self, event: CompletionEvent, now: int) -> None:
        if event.ok:
            self._emit_status(event.job_id, JobStatus.COMPLETED, event.at, result=event.result.to_payload())
        else:
            self._emit_status(event.job_id, JobStatus.FAILED, event.at, error=event.error)
        # terminal status goes on the wire before the originating delivery is acked
        tag = self._active_tags.pop(event.job_id, None)
        if tag is not None:
            self._safe_ack(tag)

    def _emit_progress(self, now: int) -> None:
        for slot in self._engine.running_slots():
            ctx = slot.context
            if not isinstance(ctx, dict) or now < ctx.get("next_progress_at", 0):
                continue
            ctx["next_progress_at"] = now + self._progress_interval_ms
            fraction = slot.run.progress_fraction(now - slot.started_at)
            msg = Message(MessageKind.PROGRESS, created_at=now, payload=progress_payload(slot.job_id, fraction, now))
            try:
                self._broker.enqueue(STATUS_QUEUE, msg)
            except BrokerError:
                logger.warning("processor %s: progress report failed", self.id, exc_info=True)

    def _emit_heartbeat(self, now: int) -> None:
        msg = Message(
            MessageKind.HEARTBEAT,
            created_at=now,
            payload=heartbeat_payload(self.id, self._engine.load, now),
        )
        try:
            self._broker.enqueue(STATUS_QUEUE, msg)
        except BrokerError:
            # heartbeats are lossy-tolerable; the next interval retries
            logger.warning("processor %s: heartbeat failed", self.id, exc_info=True)

    def _emit_status(
        self,
        job_id: JobId,
        status: JobStatus,
        at: int,
        *,
        result: Mapping[str, Any] | None = None,
        error: str | None = None,
    ) -> None:
        msg = Message(
            MessageKind.JOB_STATUS,
            created_at=at,
            payload=job_status_payload(job_id, status, at, result=result, error=error),
        )
        self._broker.enqueue(STATUS_QUEUE, msg)

    def _safe_ack(self, tag: str) -> None:
        try:
            self._broker.ack(self._queue_name, tag)
        except ExpiredTagError:
            logger.debug("processor %s: ack of superseded delivery %s ignored", self.id, tag)
