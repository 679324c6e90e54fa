"""Experiment harness: wires dispatcher, scheduler, processors and monitor over
one in-process broker and repository, runs the experiment groups, and builds
reports.

In virtual-clock mode every component is stepped once per simulated millisecond
in a fixed order (scheduler, processors by id, monitor), so a whole run is a
deterministic function of its configuration and seed. Real-clock mode drives
the same loop off the wall clock for demonstrations; it makes no determinism
promises.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .baseline import BaselineConfig, run_sender_baseline
from .broker import MessageBroker
from .clock import MonotonicClock, VirtualClock
from .dispatcher import Dispatcher, JobRequestOptions
from .model import (
    Priority,
    REQUESTS_QUEUE,
    STATUS_QUEUE,
    SchedulingPolicy,
    TERMINAL_STATUSES,
)
from .monitor import Monitor
from .processor import (
    DEFAULT_HEARTBEAT_INTERVAL_MS,
    DEFAULT_POLL_INTERVAL_MS,
    DEFAULT_PROGRESS_INTERVAL_MS,
    PoolConfig,
    Processor,
)
from .repository import JobDefinition, Repository
from .reporting import ComparisonReport, ExperimentReport, build_report
from .scheduler import Scheduler
from .workload import (
    DEFAULT_CHUNK_BUDGET,
    PrimeCountParams,
    PrimeTimedParams,
    params_payload,
)

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = {int(Priority.LOW): 1, int(Priority.HIGH): 2}


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class ProcessorSpec:
    capacity: int = 10
    cost_factor: float = 1.0
    processor_id: str | None = None
    weights: dict[int, int] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))


@dataclass(frozen=True)
class ExperimentConfig:
    workload: PrimeCountParams | PrimeTimedParams
    processors: tuple[ProcessorSpec, ...] = (ProcessorSpec(),)
    jobs_low: int = 20
    jobs_high: int = 20
    policy: SchedulingPolicy = field(default_factory=SchedulingPolicy.least_load)
    seed: int = 0
    clock_mode: str = "virtual"
    throughput_slices_per_ms: int = 10
    chunk_budget: int = DEFAULT_CHUNK_BUDGET
    poll_interval_ms: int = DEFAULT_POLL_INTERVAL_MS
    heartbeat_interval_ms: int = DEFAULT_HEARTBEAT_INTERVAL_MS
    progress_interval_ms: int = DEFAULT_PROGRESS_INTERVAL_MS
    visibility_timeout_ms: int = 30_000
    liveness_window_ms: int | None = None
    max_ticks: int = 2_000_000

    def __post_init__(self) -> None:
        if self.jobs_low < 0 or self.jobs_high < 0:
            raise ValueError("job counts must be non-negative")
        if self.clock_mode not in ("virtual", "real"):
            raise ValueError("clock_mode must be 'virtual' or 'real'")
        if self.throughput_slices_per_ms < 0:
            raise ValueError("throughput must be non-negative")

    @property
    def effective_liveness_window_ms(self) -> int:
        if self.liveness_window_ms is not None:
            return self.liveness_window_ms
        return 3 * self.heartbeat_interval_ms


@dataclass
class RunResult:
    report: ExperimentReport
    job_ids: list[str]
    submit_at_ms: int
    ticks: int
    data_dir: Path


def build_priority_stream(config: ExperimentConfig) -> list[int]:
    """The submission order of job priorities, shuffled by the config seed."""
    stream = [int(Priority.LOW)] * config.jobs_low + [int(Priority.HIGH)] * config.jobs_high
    random.Random(config.seed).shuffle(stream)
    return stream


def run_experiment(
    config: ExperimentConfig,
    data_dir: str | Path,
    *,
    crash_broker_at_tick: int | None = None,
) -> RunResult:
    """Run one experiment end to end and report per-job and aggregate timings."""
    if config.clock_mode == "real":
        return _run(config, data_dir, MonotonicClock(), real=True, crash_at=None)
    return _run(config, data_dir, VirtualClock(), real=False, crash_at=crash_broker_at_tick)


def _run(
    config: ExperimentConfig,
    data_dir: str | Path,
    clock,
    *,
    real: bool,
    crash_at: int | None,
) -> RunResult:
    root = Path(data_dir)
    root.mkdir(parents=True, exist_ok=True)
    broker = MessageBroker(
        root / "broker", clock, visibility_timeout_ms=config.visibility_timeout_ms
    )
    repo = Repository(root / "repo.jlog")
    try:
        return _run_components(config, root, clock, broker, repo, real=real, crash_at=crash_at)
    finally:
        broker.close()
        repo.close()


def _run_components(
    config: ExperimentConfig,
    root: Path,
    clock,
    broker: MessageBroker,
    repo: Repository,
    *,
    real: bool,
    crash_at: int | None,
) -> RunResult:
    broker.create_queue(REQUESTS_QUEUE)
    broker.create_queue(STATUS_QUEUE)

    kind, params = params_payload(config.workload)
    definition = JobDefinition(config.workload.definition_id, kind, params)
    repo.add_definition(definition)

    window = config.effective_liveness_window_ms
    processors = []
    for i, spec in enumerate(config.processors):
        pid = spec.processor_id or f"P{i + 1}"
        pools = {level: PoolConfig(capacity=spec.capacity, weight=w) for level, w in spec.weights.items()}
        proc = Processor(
            pid,
            repo,
            broker,
            clock,
            pools=pools,
            cost_factor=spec.cost_factor,
            poll_interval_ms=config.poll_interval_ms,
            heartbeat_interval_ms=config.heartbeat_interval_ms,
            progress_interval_ms=config.progress_interval_ms,
            throughput_slices_per_ms=config.throughput_slices_per_ms,
            chunk_budget=config.chunk_budget,
        )
        proc.register()
        processors.append(proc)
    processors.sort(key=lambda p: p.id)

    scheduler = Scheduler(
        repo,
        broker,
        clock,
        poll_interval_ms=config.poll_interval_ms,
        liveness_window_ms=window,
    )
    monitor = Monitor(
        repo, broker, clock, poll_interval_ms=config.poll_interval_ms, liveness_window_ms=window
    )
    dispatcher = Dispatcher(repo, broker, clock)

    def step_all(now: int) -> None:
        scheduler.step(now)
        for proc in processors:
            proc.step(now)
        monitor.step(now)

    def advance() -> None:
        if real:
            time.sleep(0.0005)
        else:
            clock.advance(1)

    # warm-up: run until every processor's first heartbeat has landed, so the
    # scheduler never aborts a burst for lack of live candidates
    warmup_deadline = config.heartbeat_interval_ms + 4 * config.poll_interval_ms + 8
    while processors:
        now = clock.now_ms()
        step_all(now)
        advance()
        live = repo.list_available_processors(clock.now_ms(), window)
        if len(live) == len(processors):
            break
        if clock.now_ms() > warmup_deadline:
            raise HarnessError("processors failed to become available during warm-up")

    submit_at = clock.now_ms()
    stream = build_priority_stream(config)
    job_ids = [
        dispatcher.dispatch(definition.definition_id, JobRequestOptions(priority, config.policy))
        for priority in stream
    ]

    ticks = 0
    while True:
        if crash_at is not None and ticks == crash_at:
            broker.reopen()
        now = clock.now_ms()
        step_all(now)
        ticks += 1
        if _all_terminal(repo, job_ids):
            break
        if ticks >= config.max_ticks:
            raise HarnessError(f"run did not finish within {config.max_ticks} ticks")
        advance()

    records = [repo.get_job(job_id) for job_id in job_ids]
    report = build_report(records)
    return RunResult(report=report, job_ids=job_ids, submit_at_ms=submit_at, ticks=ticks, data_dir=root)


def _all_terminal(repo: Repository, job_ids: Sequence[str]) -> bool:
    return all(repo.get_job(job_id).status in TERMINAL_STATUSES for job_id in job_ids)


def run_experiment1(config: ExperimentConfig, data_dir: str | Path) -> ExperimentReport:
    """Fixed amount of work per job (prime count), wait/processing/total measured."""
    if not isinstance(config.workload, PrimeCountParams):
        raise ValueError("experiment 1 needs a prime-count workload")
    return run_experiment(config, data_dir).report


def run_experiment2(config: ExperimentConfig, data_dir: str | Path) -> ExperimentReport:
    """Fixed duration per job, primes computed measured."""
    if not isinstance(config.workload, PrimeTimedParams):
        raise ValueError("experiment 2 needs a fixed-duration workload")
    return run_experiment(config, data_dir).report


def default_experiment1_config(**overrides) -> ExperimentConfig:
    settings = dict(
        workload=PrimeCountParams(20_000),
        processors=(ProcessorSpec(),),
        jobs_low=20,
        jobs_high=20,
        throughput_slices_per_ms=10,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


def default_experiment2_config(**overrides) -> ExperimentConfig:
    settings = dict(
        workload=PrimeTimedParams(2_000),
        processors=(ProcessorSpec(),),
        jobs_low=20,
        jobs_high=20,
        throughput_slices_per_ms=1,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


def run_comparison(
    config: ExperimentConfig,
    per_query_latency_ms: int,
    data_dir: str | Path,
) -> ComparisonReport:
    """Run the same job stream through the proposed pipeline and through a
    simulated sender-initiated cluster; report both and the improvement."""
    root = Path(data_dir)
    proposed_run = run_experiment(config, root / "proposed")
    if not proposed_run.report.valid:
        raise HarnessError(f"proposed arm invalid: {proposed_run.report.flags}")

    stream = build_priority_stream(config)
    kind, params = params_payload(config.workload)
    baseline_config = BaselineConfig(
        node_count=len(config.processors),
        per_query_latency_ms=per_query_latency_ms,
        capacity=config.processors[0].capacity,
        weights=dict(config.processors[0].weights),
        throughput_slices_per_ms=config.throughput_slices_per_ms,
        chunk_budget=config.chunk_budget,
        poll_interval_ms=config.poll_interval_ms,
        submit_at_ms=proposed_run.submit_at_ms,
        max_ticks=config.max_ticks,
    )
    baseline_records = run_sender_baseline(stream, kind, params, baseline_config)
    baseline_report = build_report(baseline_records)

    base_total = baseline_report.mean_total_ms
    prop_total = proposed_run.report.mean_total_ms
    improvement = (base_total - prop_total) / base_total if base_total > 0 else 0.0
    return ComparisonReport(
        baseline=baseline_report, proposed=proposed_run.report, improvement=improvement
    )
