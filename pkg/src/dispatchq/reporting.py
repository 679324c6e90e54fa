"""Experiment reports: per-job rows, per-priority aggregates, CSV emission and
optional figure rendering.

CSV output is deterministic byte-for-byte for a given report: fixed header,
fixed row order (job id), fixed float formatting, "\n" line endings. Figures
are rendered from the same aggregates and never feed back into the CSVs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .model import JobRecord, JobStatus, priority_name

JOBS_CSV_HEADER = ["job_id", "priority", "target", "wait_ms", "processing_ms", "total_ms", "primes"]
SUMMARY_CSV_HEADER = [
    "priority",
    "jobs",
    "mean_wait_ms",
    "mean_processing_ms",
    "mean_total_ms",
    "mean_primes",
    "makespan_ms",
]


@dataclass(frozen=True)
class JobRow:
    job_id: str
    priority: int
    target: str | None
    wait_ms: int | None
    processing_ms: int | None
    total_ms: int | None
    primes: int | None


@dataclass(frozen=True)
class PrioritySummary:
    priority: int
    jobs: int
    mean_wait_ms: float
    mean_processing_ms: float
    mean_total_ms: float
    mean_primes: float


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[JobRow, ...]
    summaries: tuple[PrioritySummary, ...]
    makespan_ms: int
    valid: bool
    flags: tuple[str, ...] = ()

    def summary_for(self, priority: int) -> PrioritySummary:
        for s in self.summaries:
            if s.priority == priority:
                return s
        raise KeyError(f"no jobs with priority {priority}")

    @property
    def mean_total_ms(self) -> float:
        done = [r.total_ms for r in self.rows if r.total_ms is not None]
        return sum(done) / len(done) if done else 0.0

    @property
    def mean_wait_ms(self) -> float:
        done = [r.wait_ms for r in self.rows if r.wait_ms is not None]
        return sum(done) / len(done) if done else 0.0

    @property
    def mean_processing_ms(self) -> float:
        done = [r.processing_ms for r in self.rows if r.processing_ms is not None]
        return sum(done) / len(done) if done else 0.0


@dataclass(frozen=True)
class ComparisonReport:
    baseline: ExperimentReport
    proposed: ExperimentReport
    improvement: float  # (baseline mean total - proposed mean total) / baseline mean total


def build_report(records: Iterable[JobRecord]) -> ExperimentReport:
    records_list = list(records)
    rows = []
    flags: list[str] = []
    for record in sorted(records_list, key=lambda r: r.id):
        primes = None
        if record.result_payload and "count" in record.result_payload:
            primes = int(record.result_payload["count"])
        rows.append(
            JobRow(
                job_id=record.id,
                priority=record.priority,
                target=record.target,
                wait_ms=record.wait_ms,
                processing_ms=record.processing_ms,
                total_ms=record.total_ms,
                primes=primes,
            )
        )
        if record.status is JobStatus.ABORTED:
            flags.append(f"{record.id} aborted")
        elif record.status is JobStatus.FAILED:
            flags.append(f"{record.id} failed: {record.error}")
        elif record.status is not JobStatus.COMPLETED:
            flags.append(f"{record.id} not terminal: {record.status.value}")

    summaries = []
    for priority in sorted({r.priority for r in rows}):
        group = [r for r in rows if r.priority == priority]
        done = [r for r in group if r.total_ms is not None]
        denominator = len(done) or 1
        summaries.append(
            PrioritySummary(
                priority=priority,
                jobs=len(group),
                mean_wait_ms=sum(r.wait_ms or 0 for r in done) / denominator,
                mean_processing_ms=sum(r.processing_ms or 0 for r in done) / denominator,
                mean_total_ms=sum(r.total_ms or 0 for r in done) / denominator,
                mean_primes=sum(r.primes or 0 for r in done) / denominator,
            )
        )

    makespan = 0
    finished = [r.finished_at for r in records_list if r.finished_at is not None]
    submitted = [r.submitted_at for r in records_list]
    if finished and submitted:
        makespan = max(finished) - min(submitted)
    return ExperimentReport(
        rows=tuple(rows),
        summaries=tuple(summaries),
        makespan_ms=makespan,
        valid=not flags,
        flags=tuple(flags),
    )


def _cell(value) -> str:
    return "" if value is None else str(value)


def emit_report(report: ExperimentReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Write jobs.csv and summary.csv; re-emitting the same report is
    byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs_path = out / "jobs.csv"
    with open(jobs_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(JOBS_CSV_HEADER)
        for row in report.rows:
            writer.writerow(
                [
                    row.job_id,
                    priority_name(row.priority),
                    _cell(row.target),
                    _cell(row.wait_ms),
                    _cell(row.processing_ms),
                    _cell(row.total_ms),
                    _cell(row.primes),
                ]
            )
    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_CSV_HEADER)
        for s in report.summaries:
            writer.writerow(
                [
                    priority_name(s.priority),
                    s.jobs,
                    f"{s.mean_wait_ms:.3f}",
                    f"{s.mean_processing_ms:.3f}",
                    f"{s.mean_total_ms:.3f}",
                    f"{s.mean_primes:.3f}",
                    "",
                ]
            )
        writer.writerow(
            [
                "all",
                len(report.rows),
                f"{report.mean_wait_ms:.3f}",
                f"{report.mean_processing_ms:.3f}",
                f"{report.mean_total_ms:.3f}",
                "",
                report.makespan_ms,
            ]
        )
    return jobs_path, summary_path


def parse_jobs_csv(path: str | Path) -> list[JobRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                JobRow(
                    job_id=rec["job_id"],
                    priority={"low": 0, "high": 1}.get(rec["priority"], -1)
                    if not rec["priority"].startswith("p")
                    else int(rec["priority"][1:]),
                    target=rec["target"] or None,
                    wait_ms=int(rec["wait_ms"]) if rec["wait_ms"] else None,
                    processing_ms=int(rec["processing_ms"]) if rec["processing_ms"] else None,
                    total_ms=int(rec["total_ms"]) if rec["total_ms"] else None,
                    primes=int(rec["primes"]) if rec["primes"] else None,
                )
            )
    return rows


def emit_comparison(report: ComparisonReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report.proposed, out / "proposed")
    emit_report(report.baseline, out / "baseline")
    path = out / "comparison.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["arm", "jobs", "mean_wait_ms", "mean_processing_ms", "mean_total_ms", "improvement"])
        for name, rep in (("sender", report.baseline), ("proposed", report.proposed)):
            writer.writerow(
                [
                    name,
                    len(rep.rows),
                    f"{rep.mean_wait_ms:.3f}",
                    f"{rep.mean_processing_ms:.3f}",
                    f"{rep.mean_total_ms:.3f}",
                    f"{report.improvement:.4f}" if name == "proposed" else "",
                ]
            )
    return path


# -- figures ---------------------------------------------------------------

def _priority_series(report: ExperimentReport) -> tuple[list[str], list[list[float]]]:
    labels = [priority_name(s.priority) for s in report.summaries]
    series = [
        [s.mean_wait_ms for s in report.summaries],
        [s.mean_processing_ms for s in report.summaries],
        [s.mean_total_ms for s in report.summaries],
    ]
    return labels, series


def render_report_figures(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    """Render bar charts of the per-priority aggregates next to the CSVs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    labels, series = _priority_series(report)
    metric_names = ["wait", "processing", "total"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.8 / max(1, len(labels))
    for i, label in enumerate(labels):
        xs = [j + i * width for j in range(len(metric_names))]
        ax.bar(xs, [series[j][i] for j in range(len(metric_names))], width=width, label=label)
    ax.set_xticks([j + width * (len(labels) - 1) / 2 for j in range(len(metric_names))])
    ax.set_xticklabels(metric_names)
    ax.set_ylabel("mean time (ms)")
    ax.set_title("Mean job times by priority")
    ax.legend(title="priority")
    fig.tight_layout()
    path = out / "summary.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    if any(s.mean_primes for s in report.summaries):
        fig, ax = plt.subplots(figsize=(5.5, 4))
        ax.bar(labels, [s.mean_primes for s in report.summaries], color=["tab:blue", "tab:orange"][: len(labels)])
        ax.set_ylabel("mean primes computed")
        ax.set_title("Primes computed by priority")
        fig.tight_layout()
        path = out / "primes.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def render_comparison_figure(report: ComparisonReport, out_dir: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metric_names = ["wait", "processing", "total"]
    arms = [("sender", report.baseline), ("proposed", report.proposed)]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.35
    for i, (name, rep) in enumerate(arms):
        values = [rep.mean_wait_ms, rep.mean_processing_ms, rep.mean_total_ms]
        xs = [j + i * width for j in range(len(metric_names))]
        ax.bar(xs, values, width=width, label=name)
    ax.set_xticks([j + width / 2 for j in range(len(metric_names))])
    ax.set_xticklabels(metric_names)
    ax.set_ylabel("mean time (ms)")
    ax.set_title(f"Sender-initiated vs proposed (improvement {report.improvement:.1%})")
    ax.legend()
    fig.tight_layout()
    path = out / "comparison.png"
    fig.savefig(path)
    plt.close(fig)
    return path
