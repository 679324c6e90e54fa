"""Job dispatcher: validates submissions, records them, and places job requests
on the requests queue.

The dispatcher deliberately knows nothing about processors; target selection is
entirely the scheduler's concern. It needs only job definitions and job records.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .broker import BrokerError, MessageBroker
from .clock import Clock
from .model import (
    JobId,
    JobRecord,
    JobStatus,
    Message,
    MessageKind,
    PolicyKind,
    REQUESTS_QUEUE,
    SchedulingPolicy,
    job_request_payload,
)
from .repository import Repository, UnknownDefinitionError

logger = logging.getLogger(__name__)


class DispatchError(Exception):
    pass


class ValidationError(DispatchError):
    """The submission was rejected before anything was persisted."""


@dataclass(frozen=True)
class JobRequestOptions:
    priority: int
    policy: SchedulingPolicy


class Dispatcher:
    def __init__(
        self,
        repository: Repository,
        broker: MessageBroker,
        clock: Clock,
        *,
        allowed_priorities: tuple[int, ...] = (0, 1),
        id_prefix: str = "J",
    ) -> None:
        # definitions and job records only: the dispatcher has no access to the
        # processor registry, so it cannot make placement decisions
        self._get_definition = repository.get_definition
        self._record_job = repository.record_job
        self._update_job_status = repository.update_job_status
        self._set_retriable = repository.set_retriable
        self._broker = broker
        self._clock = clock
        self._allowed = frozenset(int(p) for p in allowed_priorities)
        self._prefix = id_prefix
        self._seq = 0

    def dispatch(self, definition_id: str, options: JobRequestOptions) -> JobId:
        """Validate, persist (SUBMITTED then DISPATCHED), and enqueue exactly one
        job request. On broker failure the job stays SUBMITTED with a retriable
        flag rather than being silently lost."""
        try:
            self._get_definition(definition_id)
        except UnknownDefinitionError as exc:
            raise ValidationError(str(exc)) from exc
        if int(options.priority) not in self._allowed:
            raise ValidationError(
                f"priority level {options.priority} is not among configured levels {sorted(self._allowed)}"
            )
        policy = options.policy
        if policy.kind is PolicyKind.AFFINITY and ("/" in policy.processor or not policy.processor.strip()):
            raise ValidationError(f"affinity target {policy.processor!r} is not a valid processor id")

        self._seq += 1
        job_id: JobId = f"{self._prefix}-{self._seq:06d}"
        now = self._clock.now_ms()
        record = JobRecord(
            id=job_id,
            definition_id=definition_id,
            priority=int(options.priority),
            policy=policy,
            status=JobStatus.SUBMITTED,
            submitted_at=now,
        )
        self._record_job(record)
        message = Message(
            MessageKind.JOB_REQUEST,
            created_at=now,
            payload=job_request_payload(job_id, definition_id, options.priority, policy),
        )
        try:
            self._broker.enqueue(REQUESTS_QUEUE, message)
        except BrokerError as exc:
            self._set_retriable(job_id)
            logger.error("dispatch of %s failed at the broker; job left SUBMITTED/retriable", job_id)
            raise DispatchError(f"could not enqueue request for {job_id}: {exc}") from exc
        self._update_job_status(job_id, JobStatus.DISPATCHED, at=now)
        return job_id
