"""Central repository: job definitions, job records, processor registry and
health snapshots.

State changes are appended to a single journal (``repo.jlog``, same CRC framing
as the broker) and materialized views are rebuilt on open, so a reopened
repository answers queries identically. Job lifecycle transitions are validated
here, at the persistence boundary: an illegal lifecycle can never be stored.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .framing import append_record, scan_records
from .model import (
    JobId,
    JobRecord,
    JobStatus,
    ProcessorId,
    ProcessorInfo,
    TERMINAL_STATUSES,
    can_transition,
)

logger = logging.getLogger(__name__)

JOURNAL_NAME = "repo.jlog"


class RepositoryError(Exception):
    pass


class UnknownDefinitionError(RepositoryError):
    pass


class UnknownJobError(RepositoryError):
    pass


class DuplicateJobError(RepositoryError):
    pass


class UnknownProcessorError(RepositoryError):
    pass


class DuplicateProcessorError(RepositoryError):
    pass


class IllegalTransitionError(RepositoryError):
    pass


@dataclass(frozen=True)
class JobDefinition:
    definition_id: str
    workload_kind: str
    workload_params: Mapping[str, Any]
    default_priority: int = 0

    def to_payload(self) -> dict[str, Any]:
        return {
            "definition_id": self.definition_id,
            "workload_kind": self.workload_kind,
            "workload_params": dict(self.workload_params),
            "default_priority": int(self.default_priority),
        }

    @classmethod
    def from_payload(cls, data: Mapping[str, Any]) -> "JobDefinition":
        return cls(
            definition_id=data["definition_id"],
            workload_kind=data["workload_kind"],
            workload_params=data["workload_params"],
            default_priority=int(data.get("default_priority", 0)),
        )


@dataclass(frozen=True)
class ProcessorSnapshot:
    """Point-in-time registry view used for scheduling and status display.

    pool_capacity_total is the summed slot count of the processor's pools; the
    mixed-policy load term divides by it, so it rides along with the snapshot.
    """

    id: ProcessorId
    current_load: int
    cost_factor: float
    last_heartbeat: int | None
    pool_capacity_total: int


class _ProcessorState:
    __slots__ = ("info", "current_load", "last_heartbeat", "pool_capacity_total")

    def __init__(self, info: ProcessorInfo, pool_capacity_total: int) -> None:
        self.info = info
        self.current_load = 0
        self.last_heartbeat: int | None = None
        self.pool_capacity_total = pool_capacity_total


class Repository:
    """Append-only journal plus in-memory views; every operation is atomic."""

    def __init__(self, path: str | Path, *, sync: bool = False) -> None:
        self._path = Path(path)
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._sync = sync
        self._lock = threading.RLock()
        self._definitions: dict[str, JobDefinition] = {}
        self._jobs: dict[JobId, JobRecord] = {}
        self._procs: dict[ProcessorId, _ProcessorState] = {}
        self._active_by_target: dict[ProcessorId, int] = {}
        self.recovery_skips = 0
        if self._path.exists():
            self._replay()
        self._fh = open(self._path, "ab")

    # -- journal -----------------------------------------------------------

    def _replay(self) -> None:
        scan = scan_records(self._path)
        self.recovery_skips = len(scan.skipped)
        for skip in scan.skipped:
            logger.warning("repo journal: skipped record at offset %d (%s)", skip.offset, skip.reason)
        for raw in scan.records:
            doc = json.loads(raw.decode("utf-8"))
            kind = doc.get("type")
            if kind == "job_def":
                defn = JobDefinition.from_payload(doc["definition"])
                self._definitions[defn.definition_id] = defn
            elif kind == "job_upsert":
                record = JobRecord.from_payload(doc["job"])
                self._apply_job(record)
            elif kind == "proc_register":
                info = ProcessorInfo(
                    id=doc["processor"]["id"],
                    pool_capacity_per_priority=int(doc["processor"]["pool_capacity_per_priority"]),
                    cost_factor=float(doc["processor"]["cost_factor"]),
                )
                total = int(doc["processor"].get("pool_capacity_total", 2 * info.pool_capacity_per_priority))
                self._procs[info.id] = _ProcessorState(info, total)
            elif kind == "proc_status":
                state = self._procs.get(doc["id"])
                if state is None:
                    continue
                hb = int(doc["last_heartbeat"])
                if state.last_heartbeat is None or hb >= state.last_heartbeat:
                    state.current_load = int(doc["current_load"])
                    state.last_heartbeat = hb
            else:
                logger.warning("repo journal: unknown record type %r", kind)

    def _journal(self, doc: dict[str, Any]) -> None:
        raw = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
        append_record(self._fh, raw)
        self._fh.flush()
        if self._sync:
            import os

            os.fsync(self._fh.fileno())

    def _apply_job(self, record: JobRecord) -> None:
        old = self._jobs.get(record.id)
        if old is not None and old.target and old.status in (JobStatus.SCHEDULED, JobStatus.IN_PROGRESS):
            self._active_by_target[old.target] = self._active_by_target.get(old.target, 1) - 1
            if self._active_by_target[old.target] <= 0:
                del self._active_by_target[old.target]
        self._jobs[record.id] = record
        if record.target and record.status in (JobStatus.SCHEDULED, JobStatus.IN_PROGRESS):
            self._active_by_target[record.target] = self._active_by_target.get(record.target, 0) + 1

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def flush(self) -> None:
        with self._lock:
            self._fh.flush()

    # -- job definitions -----------------------------------------------------

    def add_definition(self, definition: JobDefinition) -> None:
        with self._lock:
            self._definitions[definition.definition_id] = definition
            self._journal({"type": "job_def", "definition": definition.to_payload()})

    def get_definition(self, definition_id: str) -> JobDefinition:
        with self._lock:
            defn = self._definitions.get(definition_id)
            if defn is None:
                raise UnknownDefinitionError(f"unknown job definition {definition_id!r}")
            return defn

    def list_definitions(self) -> list[JobDefinition]:
        with self._lock:
            return sorted(self._definitions.values(), key=lambda d: d.definition_id)

    # -- processor registry ----------------------------------------------------

    def register_processor(self, info: ProcessorInfo, *, pool_capacity_total: int | None = None) -> ProcessorId:
        with self._lock:
            if info.id in self._procs:
                raise DuplicateProcessorError(f"processor {info.id!r} already registered")
            total = pool_capacity_total if pool_capacity_total is not None else 2 * info.pool_capacity_per_priority
            self._procs[info.id] = _ProcessorState(info, total)
            self._journal(
                {
                    "type": "proc_register",
                    "processor": {
                        "id": info.id,
                        "pool_capacity_per_priority": info.pool_capacity_per_priority,
                        "pool_capacity_total": total,
                        "cost_factor": info.cost_factor,
                    },
                }
            )
            return info.id

    def update_processor_status(self, processor_id: ProcessorId, load: int, heartbeat_at: int) -> None:
        """Record a heartbeat. Updates older than the stored one are ignored."""
        with self._lock:
            state = self._procs.get(processor_id)
            if state is None:
                raise UnknownProcessorError(f"unknown processor {processor_id!r}")
            if state.last_heartbeat is not None and heartbeat_at < state.last_heartbeat:
                return
            state.current_load = load
            state.last_heartbeat = heartbeat_at
            self._journal({"type": "proc_status", "id": processor_id, "current_load": load, "last_heartbeat": heartbeat_at})

    def _snapshot(self, state: _ProcessorState) -> ProcessorSnapshot:
        return ProcessorSnapshot(
            id=state.info.id,
            current_load=state.current_load,
            cost_factor=state.info.cost_factor,
            last_heartbeat=state.last_heartbeat,
            pool_capacity_total=state.pool_capacity_total,
        )

    def list_available_processors(self, now: int, liveness_window_ms: int) -> list[ProcessorSnapshot]:
        """Processors whose last heartbeat is within the liveness window, sorted
        by id for deterministic tie-breaking downstream."""
        with self._lock:
            out = [
                self._snapshot(state)
                for state in self._procs.values()
                if state.last_heartbeat is not None and now - state.last_heartbeat <= liveness_window_ms
            ]
            out.sort(key=lambda s: s.id)
            return out

    def list_processors(self) -> list[ProcessorSnapshot]:
        with self._lock:
            return sorted((self._snapshot(s) for s in self._procs.values()), key=lambda s: s.id)

    def targeted_active_counts(self) -> dict[ProcessorId, int]:
        """Jobs per target that are forwarded or running but not finished."""
        with self._lock:
            return dict(self._active_by_target)

    # -- job records --------------------------------------------------------------

    def record_job(self, record: JobRecord) -> None:
        with self._lock:
            if record.id in self._jobs:
                raise DuplicateJobError(f"job {record.id!r} already recorded")
            self._apply_job(record)
            self._journal({"type": "job_upsert", "job": record.to_payload()})

    def get_job(self, job_id: JobId) -> JobRecord:
        with self._lock:
            record = self._jobs.get(job_id)
            if record is None:
                raise UnknownJobError(f"unknown job {job_id!r}")
            return record

    def has_job(self, job_id: JobId) -> bool:
        with self._lock:
            return job_id in self._jobs

    def update_job_status(
        self,
        job_id: JobId,
        status: JobStatus,
        at: int,
        *,
        target: ProcessorId | None = None,
        result: Mapping[str, Any] | None = None,
        error: str | None = None,
    ) -> JobRecord:
        """Apply a lifecycle transition, deriving timing fields on the way:
        wait time when execution starts, processing and total time at the end."""
        with self._lock:
            record = self.get_job(job_id)
            if not can_transition(record.status, status):
                raise IllegalTransitionError(f"job {job_id!r}: {record.status.value} -> {status.value} is not allowed")
            changes: dict[str, Any] = {}
            if target is not None:
                changes["target"] = target
            if result is not None:
                changes["result_payload"] = result
            if error is not None:
                changes["error"] = error
            if status is JobStatus.IN_PROGRESS:
                changes["started_at"] = at
                changes["wait_ms"] = at - record.submitted_at
            elif status in (JobStatus.COMPLETED, JobStatus.FAILED):
                changes["finished_at"] = at
                if record.started_at is not None:
                    processing = at - record.started_at
                    changes["processing_ms"] = processing
                    changes["total_ms"] = (record.wait_ms or 0) + processing
            elif status is JobStatus.ABORTED:
                changes["finished_at"] = at
            updated = record.with_status(status, **changes)
            self._apply_job(updated)
            self._journal({"type": "job_upsert", "job": updated.to_payload()})
            return updated

    def set_progress(self, job_id: JobId, fraction: float, at: int) -> None:
        """Update the non-lifecycle latest-progress field; stale reports are ignored."""
        with self._lock:
            record = self.get_job(job_id)
            if record.status in TERMINAL_STATUSES:
                return
            if record.latest_progress is not None and fraction < record.latest_progress:
                return
            updated = replace(record, latest_progress=fraction)
            self._apply_job(updated)
            self._journal({"type": "job_upsert", "job": updated.to_payload()})

    def set_retriable(self, job_id: JobId, retriable: bool = True) -> None:
        with self._lock:
            record = self.get_job(job_id)
            updated = replace(record, retriable=retriable)
            self._apply_job(updated)
            self._journal({"type": "job_upsert", "job": updated.to_payload()})

    def query_jobs(
        self,
        *,
        status: JobStatus | Iterable[JobStatus] | None = None,
        priority: int | None = None,
        target: ProcessorId | None = None,
    ) -> list[JobRecord]:
        """Filtered job listing in deterministic (job id) order."""
        statuses: frozenset[JobStatus] | None
        if status is None:
            statuses = None
        elif isinstance(status, JobStatus):
            statuses = frozenset({status})
        else:
            statuses = frozenset(status)
        with self._lock:
            out = [
                r
                for r in self._jobs.values()
                if (statuses is None or r.status in statuses)
                and (priority is None or r.priority == priority)
                and (target is None or r.target == target)
            ]
            out.sort(key=lambda r: r.id)
            return out

    def job_count(self) -> int:
        with self._lock:
            return len(self._jobs)

    def status_counts(self) -> dict[str, int]:
        with self._lock:
            out: dict[str, int] = {}
            for r in self._jobs.values():
                out[r.status.value] = out.get(r.status.value, 0) + 1
            return out
