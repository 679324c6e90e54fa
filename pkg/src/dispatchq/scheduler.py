"""Scheduler: consumes job requests, picks the best live processor under the
request's policy, and forwards the request to that processor's dispatch queue.

Selection is a full argmin scan with deterministic id tie-breaking. The load
figure used for scoring is the repository's count of jobs forwarded to a target
and not yet finished; heartbeat-reported load lags a burst of forwards by up to
one heartbeat interval, which would herd everything onto one processor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

from .broker import BrokerError, Delivery, ExpiredTagError, MessageBroker
from .clock import Clock
from .dispatcher import JobRequestOptions
from .model import (
    JobStatus,
    Message,
    MessageKind,
    PolicyKind,
    ProcessorId,
    REQUESTS_QUEUE,
    SchedulingPolicy,
    dispatch_queue_name,
)
from .repository import ProcessorSnapshot, Repository, UnknownJobError

logger = logging.getLogger(__name__)

DEFAULT_LIVENESS_WINDOW_MS = 1500  # 3 x default heartbeat interval


@dataclass(frozen=True)
class TargetScore:
    """Scoring terms for one candidate: normalized load, normalized cost, and
    their alpha-blend used by the mixed policy."""

    processor: ProcessorId
    load_term: float
    cost_term: float
    mixed: float


def compute_target_scores(candidates: Sequence[ProcessorSnapshot], alpha: float) -> list[TargetScore]:
    max_cost = max((c.cost_factor for c in candidates), default=0.0)
    scores = []
    for c in candidates:
        load_term = c.current_load / c.pool_capacity_total
        cost_term = c.cost_factor / max_cost if max_cost > 0 else 0.0
        scores.append(
            TargetScore(
                processor=c.id,
                load_term=load_term,
                cost_term=cost_term,
                mixed=alpha * load_term + (1.0 - alpha) * cost_term,
            )
        )
    return scores


def select_target(
    options: JobRequestOptions, candidates: Sequence[ProcessorSnapshot]
) -> ProcessorId | None:
    """Pick a processor among live candidates, or None when there is no target.

    least-load/least-cost/mixed are argmin scans with ties broken by smallest
    id; affinity returns its processor only if that processor is a candidate.
    """
    policy = options.policy
    if policy.kind is PolicyKind.AFFINITY:
        return policy.processor if any(c.id == policy.processor for c in candidates) else None
    if not candidates:
        return None
    if policy.kind is PolicyKind.LEAST_LOAD:
        return min(candidates, key=lambda c: (c.current_load, c.id)).id
    if policy.kind is PolicyKind.LEAST_COST:
        return min(candidates, key=lambda c: (c.cost_factor, c.id)).id
    scores = compute_target_scores(candidates, policy.alpha)
    return min(scores, key=lambda s: (s.mixed, s.processor)).processor


class Scheduler:
    def __init__(
        self,
        repository: Repository,
        broker: MessageBroker,
        clock: Clock,
        *,
        poll_interval_ms: int = 10,
        liveness_window_ms: int = DEFAULT_LIVENESS_WINDOW_MS,
        affinity_fallback: bool = False,
        consumer_name: str = "scheduler",
    ) -> None:
        self._repo = repository
        self._broker = broker
        self._clock = clock
        self._poll_interval_ms = poll_interval_ms
        self._liveness_window_ms = liveness_window_ms
        self._affinity_fallback = affinity_fallback
        self._consumer = consumer_name
        self._next_poll_at = 0

    def step(self, now: int) -> None:
        if now < self._next_poll_at:
            return
        self._next_poll_at = now + self._poll_interval_ms
        while True:
            delivery = self._broker.dequeue(REQUESTS_QUEUE, consumer=self._consumer)
            if delivery is None:
                return
            try:
                self.schedule(delivery)
            except BrokerError:
                # leave the delivery unacked; redelivery retries after timeout
                logger.warning("scheduling of %s failed at the broker", delivery.message.payload.get("job_id"))
                return

    def live_candidates(self, now: int) -> list[ProcessorSnapshot]:
        """Live processors with current_load replaced by the count of jobs
        already forwarded to them and not yet finished."""
        candidates = self._repo.list_available_processors(now, self._liveness_window_ms)
        active = self._repo.targeted_active_counts()
        return [replace(c, current_load=active.get(c.id, 0)) for c in candidates]

    def schedule(self, delivery: Delivery) -> str:
        """Process one job-request delivery; returns "forwarded", "aborted" or
        "dropped". Duplicate deliveries of an already-scheduled or terminal job
        are acked and dropped, which is what makes forwarding idempotent."""
        payload = delivery.message.payload
        job_id = payload["job_id"]
        try:
            record = self._repo.get_job(job_id)
        except UnknownJobError:
            logger.warning("request for unknown job %s dropped", job_id)
            self._safe_ack(delivery)
            return "dropped"
        if record.status is not JobStatus.DISPATCHED:
            self._safe_ack(delivery)
            return "dropped"

        options = JobRequestOptions(
            priority=int(payload["priority"]),
            policy=SchedulingPolicy.from_payload(payload["policy"]),
        )
        now = self._clock.now_ms()
        candidates = self.live_candidates(now)
        target = select_target(options, candidates)
        if target is None and self._affinity_fallback and options.policy.kind is PolicyKind.AFFINITY:
            target = select_target(
                JobRequestOptions(options.priority, SchedulingPolicy.least_load()), candidates
            )
        if target is None:
            self._repo.update_job_status(job_id, JobStatus.ABORTED, at=now)
            self._safe_ack(delivery)
            return "aborted"

        # record the target first (the once-guard), then forward, then ack
        self._repo.update_job_status(job_id, JobStatus.SCHEDULED, at=now, target=target)
        self._broker.enqueue(
            dispatch_queue_name(target),
            Message(MessageKind.JOB_REQUEST, created_at=now, payload=dict(payload)),
        )
        self._safe_ack(delivery)
        return "forwarded"

    def _safe_ack(self, delivery: Delivery) -> None:
        try:
            self._broker.ack(delivery.queue, delivery.delivery_tag)
        except ExpiredTagError:
            # a redelivered copy exists; its holder will ack against the repo guard
            logger.debug("ack of superseded request delivery %s ignored", delivery.delivery_tag)
