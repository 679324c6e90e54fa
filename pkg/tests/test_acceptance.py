"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see every line. The
experiment configurations here are the pinned desk-scale ones: 20+20 jobs,
capacity 10 per pool, 20,000 primes for fixed-work runs, 2,000 virtual ms for
fixed-duration runs, virtual clock throughout.
"""

from __future__ import annotations

import random
import time

import pytest

from _invariants import brute_force_select, random_ops_invariant_run
from dispatchq.broker import MessageBroker
from dispatchq.clock import VirtualClock
from dispatchq.dispatcher import Dispatcher, JobRequestOptions
from dispatchq.harness import (
    ProcessorSpec,
    default_experiment1_config,
    default_experiment2_config,
    run_comparison,
    run_experiment,
)
from dispatchq.model import (
    JobStatus,
    REQUESTS_QUEUE,
    STATUS_QUEUE,
    SchedulingPolicy,
)
from dispatchq.monitor import Monitor
from dispatchq.processor import Processor
from dispatchq.repository import JobDefinition, ProcessorSnapshot, Repository
from dispatchq.reporting import emit_comparison, emit_report, parse_jobs_csv
from dispatchq.scheduler import Scheduler, select_target


def announce(criterion: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE-{criterion} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def exp1_run(tmp_path_factory):
    start = time.monotonic()
    result = run_experiment(default_experiment1_config(), tmp_path_factory.mktemp("exp1"))
    return result, time.monotonic() - start


@pytest.fixture(scope="module")
def exp2_run(tmp_path_factory):
    start = time.monotonic()
    result = run_experiment(default_experiment2_config(), tmp_path_factory.mktemp("exp2"))
    return result, time.monotonic() - start


@pytest.fixture(scope="module")
def comparison_runs(tmp_path_factory):
    config = default_experiment1_config(processors=tuple(ProcessorSpec() for _ in range(4)))
    start = time.monotonic()
    with_latency = run_comparison(config, 50, tmp_path_factory.mktemp("cmp50"))
    without_latency = run_comparison(config, 0, tmp_path_factory.mktemp("cmp0"))
    return with_latency, without_latency, time.monotonic() - start


def test_criterion_1_additivity_in_every_emitted_report(exp1_run, exp2_run, comparison_runs, tmp_path):
    with_latency, without_latency, _ = comparison_runs
    emitted = []
    for name, report in (
        ("exp1", exp1_run[0].report),
        ("exp2", exp2_run[0].report),
    ):
        jobs_csv, _ = emit_report(report, tmp_path / name)
        emitted.append(jobs_csv)
    emit_comparison(with_latency, tmp_path / "cmp")
    emitted.append(tmp_path / "cmp" / "proposed" / "jobs.csv")
    emitted.append(tmp_path / "cmp" / "baseline" / "jobs.csv")

    checked = 0
    for path in emitted:
        for row in parse_jobs_csv(path):
            assert row.total_ms == row.wait_ms + row.processing_ms, f"{path}: {row}"
            checked += 1
    announce(1, checked == 160, f"total = wait + processing held exactly for {checked} emitted rows")


def test_criterion_2_experiment1_priority_speedup(exp1_run):
    result, elapsed = exp1_run
    report = result.report
    high = report.summary_for(1)
    low = report.summary_for(0)
    ratio = low.mean_total_ms / high.mean_total_ms
    ok = report.valid and high.mean_total_ms < low.mean_total_ms and ratio >= 1.2 and elapsed < 120
    announce(
        2,
        ok,
        f"exp1 mean total high={high.mean_total_ms:.0f}ms low={low.mean_total_ms:.0f}ms "
        f"ratio={ratio:.3f} (>=1.2) in {elapsed:.1f}s (<120s)",
    )


def test_criterion_3_experiment2_prime_ratio(exp2_run):
    result, elapsed = exp2_run
    report = result.report
    high = report.summary_for(1)
    low = report.summary_for(0)
    ratio = high.mean_primes / low.mean_primes
    ok = report.valid and 1.7 <= ratio <= 2.3 and elapsed < 120
    announce(
        3,
        ok,
        f"exp2 mean primes high={high.mean_primes:.0f} low={low.mean_primes:.0f} "
        f"ratio={ratio:.3f} (2.0 +/- 0.3) in {elapsed:.1f}s (<120s)",
    )


def test_experiment2_wait_times_comparable_between_priorities(exp2_run):
    # both pools saturate identically, so mean waits should agree within 25%
    result, _ = exp2_run
    high = result.report.summary_for(1)
    low = result.report.summary_for(0)
    assert abs(high.mean_wait_ms - low.mean_wait_ms) <= 0.25 * low.mean_wait_ms


def test_criterion_4_comparison_improvement(comparison_runs):
    with_latency, without_latency, elapsed = comparison_runs
    ok = (
        with_latency.improvement >= 0.12
        and without_latency.improvement == 0.0
        and elapsed < 180
    )
    announce(
        4,
        ok,
        f"sender-initiated comparison: improvement {with_latency.improvement:.1%} at 50ms "
        f"(>=12%), {without_latency.improvement!r} at 0ms (==0.0) in {elapsed:.1f}s (<180s)",
    )


def test_criterion_5_broker_durability_property(tmp_path):
    start = time.monotonic()
    for seed in range(1000):
        random_ops_invariant_run(tmp_path, seed)
    elapsed = time.monotonic() - start
    announce(
        5,
        elapsed < 60,
        f"1000 randomized crash/recover interleavings kept at-least-once, no-phantom and "
        f"FIFO invariants in {elapsed:.1f}s (<60s)",
    )


def test_criterion_6_policy_oracle_equivalence(tmp_path):
    rng = random.Random(20240)
    start = time.monotonic()
    checked = 0
    for _ in range(10_000):
        n = rng.randint(0, 9)
        live = [
            ProcessorSnapshot(
                id=f"P{i}",
                current_load=rng.randint(0, 60),
                cost_factor=round(rng.uniform(0, 12), 3),
                last_heartbeat=0,
                pool_capacity_total=rng.randint(1, 50),
            )
            for i in range(n)
        ]
        policies = [
            SchedulingPolicy.least_load(),
            SchedulingPolicy.least_cost(),
            SchedulingPolicy.mixed(round(rng.random(), 3)),
        ]
        for policy in policies:
            got = select_target(JobRequestOptions(1, policy), live)
            expected = brute_force_select(policy, live)
            assert got == expected, f"{policy} on {live}: {got} != {expected}"
            if live:
                assert got in {c.id for c in live}
            else:
                assert got is None
            checked += 1
    elapsed = time.monotonic() - start

    # empty candidate set -> NoTarget -> ABORTED, end to end
    clock = VirtualClock()
    broker = MessageBroker(tmp_path / "broker", clock)
    broker.create_queue(REQUESTS_QUEUE)
    repo = Repository(tmp_path / "repo.jlog")
    repo.add_definition(JobDefinition("primes-count:10", "PRIME_COUNT", {"target_count": 10}))
    dispatcher = Dispatcher(repo, broker, clock)
    scheduler = Scheduler(repo, broker, clock)
    job_id = dispatcher.dispatch("primes-count:10", JobRequestOptions(1, SchedulingPolicy.least_load()))
    scheduler.step(0)
    aborted = repo.get_job(job_id).status is JobStatus.ABORTED
    broker.close()
    repo.close()

    announce(
        6,
        checked == 30_000 and aborted,
        f"select_target matched the brute-force oracle on {checked} policy/snapshot draws in "
        f"{elapsed:.1f}s; empty candidate set aborted the job end to end",
    )


def test_criterion_7_liveness_exclusion_and_reinclusion(tmp_path):
    heartbeat_ms = 500
    window = 3 * heartbeat_ms
    clock = VirtualClock()
    broker = MessageBroker(tmp_path / "broker", clock)
    broker.create_queue(REQUESTS_QUEUE)
    broker.create_queue(STATUS_QUEUE)
    repo = Repository(tmp_path / "repo.jlog")
    monitor = Monitor(repo, broker, clock, liveness_window_ms=window)
    procs = [
        Processor(pid, repo, broker, clock, heartbeat_interval_ms=heartbeat_ms, throughput_slices_per_ms=0)
        for pid in ("P1", "P2")
    ]
    for proc in procs:
        proc.register()

    def tick(active):
        now = clock.now_ms()
        for proc in active:
            proc.step(now)
        monitor.step(now)
        clock.advance(1)

    def live_ids():
        return [s.id for s in repo.list_available_processors(clock.now_ms(), window)]

    last_heartbeat = 1000
    while clock.now_ms() <= last_heartbeat:
        tick(procs)  # both heartbeat at 0, 500 and 1000
    # P2 goes silent after its t=1000 heartbeat
    while clock.now_ms() <= last_heartbeat + window:
        tick(procs[:1])
    assert clock.now_ms() == last_heartbeat + window + 1
    still_included_at_boundary = "P2" in [
        s.id for s in repo.list_available_processors(last_heartbeat + window, window)
    ]
    excluded_now = live_ids() == ["P1"]

    # P2 resumes: its overdue heartbeat fires on the first resumed step and the
    # monitor folds it in at its next poll tick
    resumed_at = clock.now_ms()
    reincluded_at = None
    for _ in range(2 * 10):
        tick(procs)
        if "P2" in live_ids():
            reincluded_at = clock.now_ms() - 1
            break
    next_monitor_poll = ((resumed_at // 10) + 1) * 10

    broker.close()
    repo.close()
    ok = still_included_at_boundary and excluded_now and reincluded_at == next_monitor_poll
    announce(
        7,
        ok,
        f"silent processor included through t={last_heartbeat + window}, excluded at "
        f"t={last_heartbeat + window + 1} (exactly 3 heartbeat intervals), re-included at the "
        f"monitor poll t={reincluded_at} right after resuming at t={resumed_at}",
    )


def test_criterion_8_horizontal_scaling(exp1_run, tmp_path):
    one_proc_result, _ = exp1_run
    config = default_experiment1_config(processors=(ProcessorSpec(), ProcessorSpec()))
    two_proc_result = run_experiment(config, tmp_path / "two")
    m1 = one_proc_result.report.makespan_ms
    m2 = two_proc_result.report.makespan_ms
    ratio = m2 / m1
    ok = m2 < m1 and 0.5 <= ratio <= 0.8
    announce(
        8,
        ok,
        f"makespan 2 processors {m2}ms < 1 processor {m1}ms, ratio {ratio:.4f} in [0.5, 0.8]",
    )


def test_criterion_9_determinism_byte_identical_csv(tmp_path):
    checked = []
    for name, config in (
        ("exp1", default_experiment1_config()),
        ("exp2", default_experiment2_config()),
    ):
        first = run_experiment(config, tmp_path / f"{name}-a")
        second = run_experiment(config, tmp_path / f"{name}-b")
        emit_report(first.report, tmp_path / f"{name}-out-a")
        emit_report(second.report, tmp_path / f"{name}-out-b")
        for csv_name in ("jobs.csv", "summary.csv"):
            a = (tmp_path / f"{name}-out-a" / csv_name).read_bytes()
            b = (tmp_path / f"{name}-out-b" / csv_name).read_bytes()
            assert a == b, f"{name}/{csv_name} differs between identical runs"
            checked.append(f"{name}/{csv_name}")
    announce(9, len(checked) == 4, f"byte-identical CSVs across repeated runs: {', '.join(checked)}")
