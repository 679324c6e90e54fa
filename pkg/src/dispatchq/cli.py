"""Command-line interface: run the experiments, submit jobs, inspect state, and
emit reports with figures.

Commands: exp1, exp2, compare, submit, status, report. Experiment commands run
a fresh pipeline under --data-dir and write jobs.csv / summary.csv (and PNG
figures unless --no-figures) to --out. Exit code is 0 only for a valid run.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

from .broker import MessageBroker
from .clock import MonotonicClock, VirtualClock
from .dispatcher import Dispatcher, JobRequestOptions
from .harness import (
    ExperimentConfig,
    HarnessError,
    ProcessorSpec,
    run_comparison,
    run_experiment,
)
from .model import (
    REQUESTS_QUEUE,
    STATUS_QUEUE,
    SchedulingPolicy,
    parse_priority,
    priority_name,
)
from .repository import JobDefinition, Repository, UnknownDefinitionError
from .reporting import (
    build_report,
    emit_comparison,
    emit_report,
    render_comparison_figure,
    render_report_figures,
)
from .workload import PrimeCountParams, PrimeTimedParams, params_payload

logger = logging.getLogger(__name__)


def parse_weights(spec: str) -> dict[int, int]:
    """Parse pool weights like "high=2,low=1" (or "p3=4" for extra levels)."""
    weights: dict[int, int] = {}
    for part in spec.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise argparse.ArgumentTypeError(f"bad weights entry {part!r}; expected name=weight")
        weights[parse_priority(name)] = int(value)
    return weights


def parse_definition(definition_id: str) -> PrimeCountParams | PrimeTimedParams:
    """Parse well-known definition ids: primes-count:<n> / primes-timed:<ms>."""
    head, _, tail = definition_id.partition(":")
    if head == "primes-count" and tail.isdigit():
        return PrimeCountParams(int(tail))
    if head == "primes-timed" and tail.isdigit():
        return PrimeTimedParams(int(tail))
    raise argparse.ArgumentTypeError(
        f"unknown definition {definition_id!r}; expected primes-count:<n> or primes-timed:<ms>"
    )


def _policy(text: str) -> str:
    try:
        SchedulingPolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return text


def resolve_policy(text: str, mixed_alpha: float) -> SchedulingPolicy:
    """Parse a policy string; a bare "mixed" picks up --mixed-alpha."""
    policy = SchedulingPolicy.parse(text)
    if policy.kind.value == "mixed" and ":" not in text:
        policy = SchedulingPolicy.mixed(mixed_alpha)
    return policy


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dispatchq",
        description="Queue-based job processing with dynamic load balancing.",
    )
    parser.add_argument("--data-dir", type=Path, default=Path("dispatchq-data"))
    parser.add_argument("--broker-dir", type=Path, default=None, help="defaults to <data-dir>/broker")
    parser.add_argument("-v", "--verbose", action="store_true")

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--clock", choices=["virtual", "real"], default="virtual")
    shared.add_argument("--poll-interval-ms", type=int, default=10)
    shared.add_argument("--visibility-timeout-ms", type=int, default=30_000)
    shared.add_argument("--heartbeat-ms", type=int, default=500)
    shared.add_argument("--liveness-window-ms", type=int, default=None)
    shared.add_argument("--policy-default", type=_policy, default="least-load")
    shared.add_argument("--mixed-alpha", type=float, default=0.5)
    shared.add_argument("--weights", type=parse_weights, default=parse_weights("high=2,low=1"))
    shared.add_argument("--throughput", type=int, default=None, help="compute slices per virtual ms")

    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_experiment_args(p, default_throughput):
        p.add_argument("--jobs-low", type=int, default=20)
        p.add_argument("--jobs-high", type=int, default=20)
        p.add_argument("--processors", type=int, default=1, help="number of processors")
        p.add_argument("--capacity", type=int, default=10, help="slots per priority pool")
        p.add_argument("--cost-factor", type=float, default=1.0, help="uniform cost factor")
        p.add_argument("--cost-factors", type=str, default=None, help="per-processor costs, comma separated")
        p.add_argument("--processor-id", type=str, default=None, help="id of the first processor")
        p.add_argument("--out", type=Path, default=None, help="report directory")
        p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
        p.set_defaults(default_throughput=default_throughput)

    p1 = sub.add_parser("exp1", parents=[shared], help="fixed work per job; wait/processing/total by priority")
    p1.add_argument("--prime-target", type=int, default=20_000)
    add_common_experiment_args(p1, default_throughput=10)

    p2 = sub.add_parser("exp2", parents=[shared], help="fixed duration per job; primes computed by priority")
    p2.add_argument("--duration-ms", type=int, default=2_000)
    add_common_experiment_args(p2, default_throughput=1)

    pc = sub.add_parser("compare", parents=[shared], help="proposed pipeline vs sender-initiated baseline")
    pc.add_argument("--nodes", type=int, default=4)
    pc.add_argument("--query-latency-ms", type=int, default=50)
    pc.add_argument("--jobs", type=int, default=40, help="total jobs, split half low / half high")
    pc.add_argument("--prime-target", type=int, default=20_000)
    pc.add_argument("--capacity", type=int, default=10)
    pc.add_argument("--out", type=Path, default=None)
    pc.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    pc.set_defaults(default_throughput=10)

    ps = sub.add_parser("submit", parents=[shared], help="record and enqueue job requests against the data dir")
    ps.add_argument("--definition", required=True, help="primes-count:<n> or primes-timed:<ms>")
    ps.add_argument("--priority", type=parse_priority, default=0)
    ps.add_argument("--policy", type=_policy, default=None, help="defaults to --policy-default")
    ps.add_argument("--count", type=int, default=1)

    sub.add_parser("status", parents=[shared], help="print the processor table and job counts")

    pr = sub.add_parser("report", parents=[shared], help="emit CSV (and figures) from the data dir's repository")
    pr.add_argument("--out", type=Path, default=None)
    pr.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)

    return parser


def _processor_specs(args) -> tuple[ProcessorSpec, ...]:
    costs = [args.cost_factor] * args.processors
    if args.cost_factors:
        listed = [float(c) for c in args.cost_factors.split(",")]
        if len(listed) != args.processors:
            raise SystemExit(f"--cost-factors needs {args.processors} values, got {len(listed)}")
        costs = listed
    specs = []
    for i in range(args.processors):
        pid = args.processor_id if (i == 0 and args.processor_id) else None
        specs.append(ProcessorSpec(capacity=args.capacity, cost_factor=costs[i], processor_id=pid, weights=dict(args.weights)))
    return tuple(specs)


def _experiment_config(args, workload) -> ExperimentConfig:
    throughput = args.throughput if args.throughput is not None else args.default_throughput
    return ExperimentConfig(
        workload=workload,
        processors=_processor_specs(args),
        jobs_low=args.jobs_low,
        jobs_high=args.jobs_high,
        policy=resolve_policy(args.policy_default, args.mixed_alpha),
        seed=args.seed,
        clock_mode=args.clock,
        throughput_slices_per_ms=throughput,
        poll_interval_ms=args.poll_interval_ms,
        heartbeat_interval_ms=args.heartbeat_ms,
        visibility_timeout_ms=args.visibility_timeout_ms,
        liveness_window_ms=args.liveness_window_ms,
    )


def _fresh_run_dir(data_dir: Path, name: str) -> Path:
    run_dir = data_dir / "runs" / name
    if run_dir.exists():
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    return run_dir


def _print_report(report) -> None:
    for s in report.summaries:
        print(
            f"  {priority_name(s.priority):>5}: {s.jobs} jobs, "
            f"mean wait {s.mean_wait_ms:.1f} ms, mean processing {s.mean_processing_ms:.1f} ms, "
            f"mean total {s.mean_total_ms:.1f} ms, mean primes {s.mean_primes:.1f}"
        )
    print(f"  makespan: {report.makespan_ms} ms")
    if not report.valid:
        print("  INVALID RUN:")
        for flag in report.flags:
            print(f"    - {flag}")


def _emit(report, out_dir: Path, figures: bool) -> None:
    jobs_path, summary_path = emit_report(report, out_dir)
    print(f"  wrote {jobs_path}")
    print(f"  wrote {summary_path}")
    if figures:
        for path in render_report_figures(report, out_dir):
            print(f"  wrote {path}")


def _cmd_experiment(args, name: str) -> int:
    if name == "exp1":
        workload = PrimeCountParams(args.prime_target)
    else:
        workload = PrimeTimedParams(args.duration_ms)
    config = _experiment_config(args, workload)
    run_dir = _fresh_run_dir(args.data_dir, name)
    result = run_experiment(config, run_dir)
    print(f"{name}: {len(result.report.rows)} jobs on {len(config.processors)} processor(s)")
    _print_report(result.report)
    out = args.out or (args.data_dir / "reports" / name)
    _emit(result.report, out, args.figures)
    return 0 if result.report.valid else 1


def _cmd_compare(args) -> int:
    jobs_low = args.jobs // 2
    jobs_high = args.jobs - jobs_low
    throughput = args.throughput if args.throughput is not None else args.default_throughput
    config = ExperimentConfig(
        workload=PrimeCountParams(args.prime_target),
        processors=tuple(ProcessorSpec(capacity=args.capacity, weights=dict(args.weights)) for _ in range(args.nodes)),
        jobs_low=jobs_low,
        jobs_high=jobs_high,
        policy=resolve_policy(args.policy_default, args.mixed_alpha),
        seed=args.seed,
        clock_mode=args.clock,
        throughput_slices_per_ms=throughput,
        poll_interval_ms=args.poll_interval_ms,
        heartbeat_interval_ms=args.heartbeat_ms,
        visibility_timeout_ms=args.visibility_timeout_ms,
        liveness_window_ms=args.liveness_window_ms,
    )
    run_dir = _fresh_run_dir(args.data_dir, "compare")
    comparison = run_comparison(config, args.query_latency_ms, run_dir)
    print(f"compare: {args.jobs} jobs, {args.nodes} nodes, {args.query_latency_ms} ms per status query")
    print("sender-initiated:")
    _print_report(comparison.baseline)
    print("proposed:")
    _print_report(comparison.proposed)
    print(f"improvement in mean total time: {comparison.improvement:.1%}")
    out = args.out or (args.data_dir / "reports" / "compare")
    path = emit_comparison(comparison, out)
    print(f"  wrote {path}")
    if args.figures:
        print(f"  wrote {render_comparison_figure(comparison, out)}")
    ok = comparison.baseline.valid and comparison.proposed.valid
    return 0 if ok else 1


def _open_state(args):
    clock = VirtualClock() if args.clock == "virtual" else MonotonicClock()
    broker_dir = args.broker_dir or (args.data_dir / "broker")
    broker = MessageBroker(broker_dir, clock, visibility_timeout_ms=args.visibility_timeout_ms)
    repo = Repository(args.data_dir / "repo.jlog")
    return clock, broker, repo


def _cmd_submit(args) -> int:
    clock, broker, repo = _open_state(args)
    try:
        params = parse_definition(args.definition)
        kind, payload = params_payload(params)
        try:
            repo.get_definition(args.definition)
        except UnknownDefinitionError:
            repo.add_definition(JobDefinition(args.definition, kind, payload))
        for name in (REQUESTS_QUEUE, STATUS_QUEUE):
            if not broker.has_queue(name):
                broker.create_queue(name)
        policy = resolve_policy(args.policy or args.policy_default, args.mixed_alpha)
        dispatcher = Dispatcher(repo, broker, clock, id_prefix=f"J{repo.job_count()}")
        for _ in range(args.count):
            job_id = dispatcher.dispatch(args.definition, JobRequestOptions(args.priority, policy))
            print(f"dispatched {job_id} ({args.definition}, priority {priority_name(args.priority)})")
        return 0
    finally:
        broker.close()
        repo.close()


def _cmd_status(args) -> int:
    clock, broker, repo = _open_state(args)
    try:
        processors = repo.list_processors()
        window = args.liveness_window_ms if args.liveness_window_ms is not None else 3 * args.heartbeat_ms
        now = max((p.last_heartbeat or 0 for p in processors), default=0)
        print(f"{'PROCESSOR':<12}{'LOAD':>6}{'COST':>8}{'AVAILABLE':>11}{'HB-AGE-MS':>11}")
        for p in processors:
            if p.last_heartbeat is None:
                available, age = "no", "-"
            else:
                age = now - p.last_heartbeat
                available = "yes" if age <= window else "no"
            print(f"{p.id:<12}{p.current_load:>6}{p.cost_factor:>8.2f}{available:>11}{age:>11}")
        if not processors:
            print("(no processors registered)")
        counts = repo.status_counts()
        summary = " ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "(none)"
        print(f"jobs: {summary}")
        return 0
    finally:
        broker.close()
        repo.close()


def _cmd_report(args) -> int:
    repo = Repository(args.data_dir / "repo.jlog")
    try:
        report = build_report(repo.query_jobs())
    finally:
        repo.close()
    _print_report(report)
    out = args.out or (args.data_dir / "reports" / "latest")
    _emit(report, out, args.figures)
    return 0 if report.valid else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        if args.command in ("exp1", "exp2"):
            return _cmd_experiment(args, args.command)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "submit":
            return _cmd_submit(args)
        if args.command == "status":
            return _cmd_status(args)
        if args.command == "report":
            return _cmd_report(args)
        raise SystemExit(2)
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
