"""Shared domain types: jobs, priorities, policies, processors and queue messages.

Everything here is an immutable value type; mutation happens by replacing records
in the repository. Timestamps are integer milliseconds from an injected clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Any, Mapping

JobId = str
ProcessorId = str


class Priority(IntEnum):
    """Named priority levels. Plain ints are accepted wherever a level is expected,
    so deployments may configure pools for more levels than the two named ones."""

    LOW = 0
    HIGH = 1


_PRIORITY_NAMES = {0: "low", 1: "high"}


def priority_name(level: int) -> str:
    return _PRIORITY_NAMES.get(int(level), f"p{int(level)}")


def parse_priority(text: str) -> int:
    t = text.strip().lower()
    for level, name in _PRIORITY_NAMES.items():
        if t == name:
            return level
    if t.startswith("p") and t[1:].isdigit():
        return int(t[1:])
    if t.lstrip("-").isdigit():
        return int(t)
    raise ValueError(f"unknown priority {text!r}")


class JobStatus(str, Enum):
    SUBMITTED = "SUBMITTED"
    DISPATCHED = "DISPATCHED"
    SCHEDULED = "SCHEDULED"
    IN_PROGRESS = "IN_PROGRESS"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    ABORTED = "ABORTED"


TERMINAL_STATUSES = frozenset({JobStatus.COMPLETED, JobStatus.FAILED, JobStatus.ABORTED})

_ALLOWED_TRANSITIONS = frozenset(
    {
        (JobStatus.SUBMITTED, JobStatus.DISPATCHED),
        (JobStatus.DISPATCHED, JobStatus.SCHEDULED),
        (JobStatus.SCHEDULED, JobStatus.IN_PROGRESS),
        (JobStatus.IN_PROGRESS, JobStatus.COMPLETED),
        (JobStatus.IN_PROGRESS, JobStatus.FAILED),
        (JobStatus.DISPATCHED, JobStatus.ABORTED),
        (JobStatus.SCHEDULED, JobStatus.ABORTED),
    }
)


def can_transition(current: JobStatus, new: JobStatus) -> bool:
    return (current, new) in _ALLOWED_TRANSITIONS


class PolicyKind(str, Enum):
    LEAST_LOAD = "least-load"
    LEAST_COST = "least-cost"
    MIXED = "mixed"
    AFFINITY = "affinity"


@dataclass(frozen=True)
class SchedulingPolicy:
    """Target-selection rule carried on each job request.

    MIXED blends a normalized load term and a normalized cost term with weight
    ``alpha`` on load. AFFINITY pins the job to one processor and bypasses
    scoring entirely.
    """

    kind: PolicyKind
    alpha: float = 0.5
    processor: ProcessorId | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.kind is PolicyKind.AFFINITY and not self.processor:
            raise ValueError("affinity policy requires a processor id")
        if self.kind is not PolicyKind.AFFINITY and self.processor is not None:
            raise ValueError("processor id only valid for affinity policy")

    @classmethod
    def least_load(cls) -> "SchedulingPolicy":
        return cls(PolicyKind.LEAST_LOAD)

    @classmethod
    def least_cost(cls) -> "SchedulingPolicy":
        return cls(PolicyKind.LEAST_COST)

    @classmethod
    def mixed(cls, alpha: float = 0.5) -> "SchedulingPolicy":
        return cls(PolicyKind.MIXED, alpha=alpha)

    @classmethod
    def affinity(cls, processor: ProcessorId) -> "SchedulingPolicy":
        return cls(PolicyKind.AFFINITY, processor=processor)

    @classmethod
    def parse(cls, text: str) -> "SchedulingPolicy":
        """Parse CLI syntax: least-load | least-cost | mixed[:alpha] | affinity:<proc>."""
        head, _, tail = text.strip().partition(":")
        head = head.lower()
        if head == PolicyKind.LEAST_LOAD.value:
            return cls.least_load()
        if head == PolicyKind.LEAST_COST.value:
            return cls.least_cost()
        if head == PolicyKind.MIXED.value:
            return cls.mixed(float(tail) if tail else 0.5)
        if head == PolicyKind.AFFINITY.value:
            if not tail:
                raise ValueError("affinity policy needs a processor id, e.g. affinity:P1")
            return cls.affinity(tail)
        raise ValueError(f"unknown policy {text!r}")

    def to_payload(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.kind is PolicyKind.MIXED:
            out["alpha"] = self.alpha
        if self.kind is PolicyKind.AFFINITY:
            out["processor"] = self.processor
        return out

    @classmethod
    def from_payload(cls, data: Mapping[str, Any]) -> "SchedulingPolicy":
        kind = PolicyKind(data["kind"])
        return cls(
            kind,
            alpha=float(data.get("alpha", 0.5)),
            processor=data.get("processor"),
        )


@dataclass(frozen=True)
class JobRecord:
    """One job's identity, request options, lifecycle state and timing measurements.

    Durations are integer milliseconds and, for a completed job,
    total_ms == wait_ms + processing_ms exactly.
    """

    id: JobId
    definition_id: str
    priority: int
    policy: SchedulingPolicy
    status: JobStatus
    submitted_at: int
    target: ProcessorId | None = None
    started_at: int | None = None
    finished_at: int | None = None
    wait_ms: int | None = None
    processing_ms: int | None = None
    total_ms: int | None = None
    result_payload: Mapping[str, Any] | None = None
    error: str | None = None
    latest_progress: float | None = None
    retriable: bool = False

    def with_status(self, status: JobStatus, **changes: Any) -> "JobRecord":
        return replace(self, status=status, **changes)

    def to_payload(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "definition_id": self.definition_id,
            "priority": int(self.priority),
            "policy": self.policy.to_payload(),
            "status": self.status.value,
            "submitted_at": self.submitted_at,
            "target": self.target,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "wait_ms": self.wait_ms,
            "processing_ms": self.processing_ms,
            "total_ms": self.total_ms,
            "result_payload": dict(self.result_payload) if self.result_payload else None,
            "error": self.error,
            "latest_progress": self.latest_progress,
            "retriable": self.retriable,
        }

    @classmethod
    def from_payload(cls, data: Mapping[str, Any]) -> "JobRecord":
        return cls(
            id=data["id"],
            definition_id=data["definition_id"],
            priority=int(data["priority"]),
            policy=SchedulingPolicy.from_payload(data["policy"]),
            status=JobStatus(data["status"]),
            submitted_at=int(data["submitted_at"]),
            target=data.get("target"),
            started_at=data.get("started_at"),
            finished_at=data.get("finished_at"),
            wait_ms=data.get("wait_ms"),
            processing_ms=data.get("processing_ms"),
            total_ms=data.get("total_ms"),
            result_payload=data.get("result_payload"),
            error=data.get("error"),
            latest_progress=data.get("latest_progress"),
            retriable=bool(data.get("retriable", False)),
        )


@dataclass(frozen=True)
class ProcessorInfo:
    """Registry entry for one processor. pool_capacity_per_priority is the slot
    count of each priority pool; cost_factor is a configured relative cost."""

    id: ProcessorId
    pool_capacity_per_priority: int = 10
    cost_factor: float = 1.0

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("processor id must be non-empty")
        if self.pool_capacity_per_priority < 1:
            raise ValueError("pool capacity must be positive")
        if self.cost_factor < 0:
            raise ValueError("cost factor must be non-negative")


class MessageKind(str, Enum):
    JOB_REQUEST = "JOB_REQUEST"
    JOB_STATUS = "JOB_STATUS"
    PROGRESS = "PROGRESS"
    HEARTBEAT = "HEARTBEAT"


@dataclass(frozen=True)
class Message:
    """Typed envelope flowing over broker queues. msg_id is assigned by the
    broker at enqueue time and is unique per broker."""

    kind: MessageKind
    created_at: int
    payload: Mapping[str, Any] = field(default_factory=dict)
    msg_id: str = ""


def job_request_payload(
    job_id: JobId, definition_id: str, priority: int, policy: SchedulingPolicy
) -> dict[str, Any]:
    return {
        "job_id": job_id,
        "definition_id": definition_id,
        "priority": int(priority),
        "policy": policy.to_payload(),
    }


def job_status_payload(
    job_id: JobId,
    status: JobStatus,
    at: int,
    *,
    result: Mapping[str, Any] | None = None,
    error: str | None = None,
) -> dict[str, Any]:
    out: dict[str, Any] = {"job_id": job_id, "status": status.value, "at": at}
    if result is not None:
        out["result"] = dict(result)
    if error is not None:
        out["error"] = error
    return out


def progress_payload(job_id: JobId, fraction: float, at: int) -> dict[str, Any]:
    return {"job_id": job_id, "fraction": fraction, "at": at}


def heartbeat_payload(processor: ProcessorId, current_load: int, timestamp: int) -> dict[str, Any]:
    return {"processor": processor, "current_load": current_load, "timestamp": timestamp}


REQUESTS_QUEUE = "requests"
STATUS_QUEUE = "status"


def dispatch_queue_name(processor: ProcessorId) -> str:
    return f"dispatch.{processor}"
