"""Monitor: folds the status queue into the repository.

Heartbeats update processor snapshots, job-status messages drive lifecycle
transitions (with timing derivation in the repository), progress messages
update a non-lifecycle field. The fold is idempotent: replaying a status stream
leaves the repository exactly where a single pass does. Communication is one
way by construction: the monitor holds only the broker's consumer operations,
so it cannot enqueue anything.
"""

from __future__ import annotations

import logging

from .broker import Delivery, MessageBroker
from .clock import Clock
from .model import (
    JobStatus,
    MessageKind,
    ProcessorId,
    STATUS_QUEUE,
    TERMINAL_STATUSES,
    can_transition,
)
from .repository import (
    IllegalTransitionError,
    Repository,
    RepositoryError,
    UnknownJobError,
    UnknownProcessorError,
)
from .scheduler import DEFAULT_LIVENESS_WINDOW_MS

logger = logging.getLogger(__name__)


class Monitor:
    def __init__(
        self,
        repository: Repository,
        broker: MessageBroker,
        clock: Clock,
        *,
        poll_interval_ms: int = 10,
        liveness_window_ms: int = DEFAULT_LIVENESS_WINDOW_MS,
        consumer_name: str = "monitor",
    ) -> None:
        self._repo = repository
        # consumer-side operations only; no producer handle exists here
        self._dequeue = broker.dequeue
        self._ack = broker.ack
        self._clock = clock
        self._poll_interval_ms = poll_interval_ms
        self._liveness_window_ms = liveness_window_ms
        self._consumer = consumer_name
        self._next_poll_at = 0
        self.dead_letter_count = 0

    def step(self, now: int) -> None:
        if now < self._next_poll_at:
            return
        self._next_poll_at = now + self._poll_interval_ms
        while True:
            delivery = self._dequeue(STATUS_QUEUE, consumer=self._consumer)
            if delivery is None:
                return
            try:
                self.handle_status_message(delivery)
            except RepositoryError:
                # not acked: the write failed, redelivery will retry
                logger.warning("status message %s failed to apply", delivery.message.msg_id, exc_info=True)
                return

    def handle_status_message(self, delivery: Delivery) -> str:
        """Apply one status-queue message; returns "applied", "ignored" or
        "dead_letter". The delivery is acked in every outcome except a
        repository write failure, which propagates before the ack."""
        message = delivery.message
        payload = message.payload
        outcome = "applied"
        if message.kind is MessageKind.HEARTBEAT:
            try:
                self._repo.update_processor_status(
                    payload["processor"], int(payload["current_load"]), int(payload["timestamp"])
                )
            except UnknownProcessorError:
                self.dead_letter_count += 1
                outcome = "dead_letter"
        elif message.kind is MessageKind.JOB_STATUS:
            outcome = self._apply_job_status(payload)
        elif message.kind is MessageKind.PROGRESS:
            try:
                self._repo.set_progress(payload["job_id"], float(payload["fraction"]), int(payload["at"]))
            except UnknownJobError:
                self.dead_letter_count += 1
                outcome = "dead_letter"
        else:
            self.dead_letter_count += 1
            outcome = "dead_letter"
        self._ack(delivery.queue, delivery.delivery_tag)
        return outcome

    def _apply_job_status(self, payload: dict) -> str:
        job_id = payload["job_id"]
        status = JobStatus(payload["status"])
        try:
            record = self._repo.get_job(job_id)
        except UnknownJobError:
            self.dead_letter_count += 1
            return "dead_letter"
        if record.status in TERMINAL_STATUSES or not can_transition(record.status, status):
            return "ignored"  # duplicate or out-of-order report
        try:
            self._repo.update_job_status(
                job_id,
                status,
                at=int(payload["at"]),
                result=payload.get("result"),
                error=payload.get("error"),
            )
        except IllegalTransitionError:
            return "ignored"
        return "applied"

    def liveness_view(self, now: int) -> list[tuple[ProcessorId, bool]]:
        """(processor, available) for every registered processor, availability
        computed exactly as the repository's live listing does."""
        out = []
        for snap in self._repo.list_processors():
            available = snap.last_heartbeat is not None and now - snap.last_heartbeat <= self._liveness_window_ms
            out.append((snap.id, available))
        return out
