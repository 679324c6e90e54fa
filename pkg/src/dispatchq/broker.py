"""Embedded durable message broker: named FIFO queues, at-least-once delivery.

A dequeued message stays hidden for a visibility timeout; if it is not acked in
time it becomes deliverable again with an incremented attempt counter. Durable
queues append every message and every ack tombstone to ``<root>/<queue>.qlog``
using the shared CRC framing, so a broker reopened from disk sees exactly the
enqueued-but-unacked messages, in enqueue order. In-flight state is memory-only
and is discarded by recovery, which is what makes delivery at-least-once.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .clock import Clock
from .framing import ScanResult, append_record, scan_records
from .model import Message, MessageKind

logger = logging.getLogger(__name__)

DEFAULT_VISIBILITY_TIMEOUT_MS = 30_000
QLOG_SUFFIX = ".qlog"


class BrokerError(Exception):
    """Base class for broker failures."""


class UnknownQueueError(BrokerError):
    pass


class DuplicateQueueError(BrokerError):
    pass


class ExpiredTagError(BrokerError):
    """The delivery tag no longer refers to an in-flight delivery; the message
    may already have been redelivered to another consumer."""


class BrokerClosedError(BrokerError):
    pass


@dataclass(frozen=True)
class Delivery:
    queue: str
    message: Message
    delivery_tag: str
    attempt: int


def message_to_json(message: Message) -> bytes:
    doc = {
        "msg_id": message.msg_id,
        "kind": message.kind.value,
        "created_at": message.created_at,
        "payload": dict(message.payload),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def message_from_json(raw: bytes) -> Message:
    doc = json.loads(raw.decode("utf-8"))
    return Message(
        kind=MessageKind(doc["kind"]),
        created_at=int(doc["created_at"]),
        payload=doc["payload"],
        msg_id=doc["msg_id"],
    )


class _Entry:
    __slots__ = ("message", "acked", "invisible_until", "attempt", "live_tag")

    def __init__(self, message: Message) -> None:
        self.message = message
        self.acked = False
        self.invisible_until = -1  # hidden while now <= invisible_until
        self.attempt = 0
        self.live_tag: str | None = None


class _Queue:
    def __init__(self, name: str, durable: bool, path: Path | None) -> None:
        self.name = name
        self.durable = durable
        self.path = path
        self.fh = None
        self.entries: list[_Entry] = []
        self.by_msg_id: dict[str, _Entry] = {}
        self.head = 0  # index of first possibly-unacked entry

    def open_file(self) -> None:
        if self.durable and self.path is not None:
            self.fh = open(self.path, "ab")

    def close_file(self) -> None:
        if self.fh is not None:
            self.fh.close()
            self.fh = None


class MessageBroker:
    """In-process broker safe for concurrent producers and consumers.

    Consumers poll; there are no blocking waits. All clock reads go through the
    injected clock so visibility timeouts are testable under a virtual clock.
    """

    def __init__(
        self,
        storage_root: str | Path,
        clock: Clock,
        *,
        visibility_timeout_ms: int = DEFAULT_VISIBILITY_TIMEOUT_MS,
        sync: bool = False,
    ) -> None:
        self._root = Path(storage_root)
        self._root.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._visibility_timeout_ms = visibility_timeout_ms
        self._sync = sync
        self._lock = threading.RLock()
        self._queues: dict[str, _Queue] = {}
        self._msg_seq = 0
        self._tag_seq = 0
        self._acked_tags: set[str] = set()
        self._tag_entries: dict[str, tuple[_Queue, _Entry]] = {}
        self._closed = False
        self.recovery_report: dict[str, ScanResult] = {}
        self._load_existing_queues()

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def recover(
        cls,
        storage_root: str | Path,
        clock: Clock,
        *,
        visibility_timeout_ms: int = DEFAULT_VISIBILITY_TIMEOUT_MS,
        sync: bool = False,
    ) -> "MessageBroker":
        """Open a broker over an existing storage root, restoring all durable
        queues. Enqueued-but-unacked messages become visible again."""
        return cls(
            storage_root,
            clock,
            visibility_timeout_ms=visibility_timeout_ms,
            sync=sync,
        )

    def close(self) -> None:
        with self._lock:
            for q in self._queues.values():
                q.close_file()
            self._closed = True

    def crash(self) -> None:
        """Test hook: drop all in-memory state and make the instance unusable,
        as if the hosting process died. Reopen with recover()."""
        self.close()

    def reopen(self) -> None:
        """Simulate a crash and in-place recovery: all in-flight deliveries are
        forgotten and durable state is re-read from disk."""
        with self._lock:
            for q in self._queues.values():
                q.close_file()
            self._queues.clear()
            self._acked_tags.clear()
            self._tag_entries.clear()
            self._msg_seq = 0
            self._closed = False
            self._load_existing_queues()

    def _load_existing_queues(self) -> None:
        for path in sorted(self._root.glob(f"*{QLOG_SUFFIX}")):
            name = path.name[: -len(QLOG_SUFFIX)]
            self._restore_queue(name, path)

    def _restore_queue(self, name: str, path: Path) -> None:
        scan = scan_records(path)
        self.recovery_report[name] = scan
        for skip in scan.skipped:
            logger.warning("queue %s: skipped record at offset %d (%s)", name, skip.offset, skip.reason)
        queue = _Queue(name, durable=True, path=path)
        acked_ids: set[str] = set()
        ordered: list[Message] = []
        for raw in scan.records:
            doc = json.loads(raw.decode("utf-8"))
            if "ack" in doc:
                acked_ids.add(doc["ack"])
                continue
            msg = Message(
                kind=MessageKind(doc["kind"]),
                created_at=int(doc["created_at"]),
                payload=doc["payload"],
                msg_id=doc["msg_id"],
            )
            ordered.append(msg)
            seq = _numeric_suffix(msg.msg_id)
            if seq is not None:
                self._msg_seq = max(self._msg_seq, seq)
        for msg in ordered:
            entry = _Entry(msg)
            if msg.msg_id in acked_ids:
                entry.acked = True
            queue.entries.append(entry)
            queue.by_msg_id[msg.msg_id] = entry
        queue.open_file()
        self._queues[name] = queue

    # -- queue management ----------------------------------------------------

    def create_queue(self, name: str, durable: bool = True) -> None:
        if not name or "/" in name:
            raise BrokerError(f"invalid queue name {name!r}")
        with self._lock:
            self._ensure_open()
            if name in self._queues:
                raise DuplicateQueueError(f"queue {name!r} already exists")
            path = self._root / f"{name}{QLOG_SUFFIX}" if durable else None
            queue = _Queue(name, durable, path)
            if durable:
                path.touch()
                queue.open_file()
            self._queues[name] = queue

    def has_queue(self, name: str) -> bool:
        with self._lock:
            return name in self._queues

    def queue_names(self) -> list[str]:
        with self._lock:
            return sorted(self._queues)

    def size(self, name: str) -> int:
        """Number of not-yet-acked messages (visible plus in-flight)."""
        with self._lock:
            q = self._get_queue(name)
            return sum(1 for e in q.entries if not e.acked)

    def visible_count(self, name: str) -> int:
        now = self._clock.now_ms()
        with self._lock:
            q = self._get_queue(name)
            return sum(1 for e in q.entries if not e.acked and e.invisible_until < now)

    # -- messaging -----------------------------------------------------------

    def enqueue(self, queue: str, message: Message) -> str:
        with self._lock:
            self._ensure_open()
            q = self._get_queue(queue)
            self._msg_seq += 1
            msg_id = f"m{self._msg_seq:08d}"
            stored = Message(
                kind=message.kind,
                created_at=message.created_at,
                payload=message.payload,
                msg_id=msg_id,
            )
            if q.durable:
                self._append(q, message_to_json(stored))
            entry = _Entry(stored)
            q.entries.append(entry)
            q.by_msg_id[msg_id] = entry
            return msg_id

    def dequeue(
        self,
        queue: str,
        consumer: str,
        visibility_timeout_ms: int | None = None,
    ) -> Delivery | None:
        timeout = self._visibility_timeout_ms if visibility_timeout_ms is None else visibility_timeout_ms
        now = self._clock.now_ms()
        with self._lock:
            self._ensure_open()
            q = self._get_queue(queue)
            while q.head < len(q.entries) and q.entries[q.head].acked:
                q.head += 1
            for idx in range(q.head, len(q.entries)):
                entry = q.entries[idx]
                if entry.acked or entry.invisible_until >= now:
                    continue
                entry.attempt += 1
                entry.invisible_until = now + timeout
                self._tag_seq += 1
                tag = f"d{self._tag_seq:08d}"
                entry.live_tag = tag
                self._tag_entries[tag] = (q, entry)
                return Delivery(queue=queue, message=entry.message, delivery_tag=tag, attempt=entry.attempt)
            return None

    def ack(self, queue: str, delivery_tag: str) -> None:
        with self._lock:
            self._ensure_open()
            q = self._get_queue(queue)
            if delivery_tag in self._acked_tags:
                return  # idempotent within the same delivery
            pair = self._tag_entries.get(delivery_tag)
            if pair is None:
                raise ExpiredTagError(f"unknown delivery tag {delivery_tag!r}")
            tag_queue, entry = pair
            if tag_queue is not q:
                raise ExpiredTagError(f"delivery tag {delivery_tag!r} belongs to queue {tag_queue.name!r}")
            if entry.live_tag != delivery_tag:
                raise ExpiredTagError(f"delivery tag {delivery_tag!r} was superseded by a redelivery")
            if q.durable:
                self._append(q, json.dumps({"ack": entry.message.msg_id}).encode("utf-8"))
            entry.acked = True
            entry.live_tag = None
            self._acked_tags.add(delivery_tag)
            del self._tag_entries[delivery_tag]

    # -- internals -------------------------------------------------------------

    def _append(self, q: _Queue, payload: bytes) -> None:
        append_record(q.fh, payload)
        q.fh.flush()
        if self._sync:
            import os

            os.fsync(q.fh.fileno())

    def _get_queue(self, name: str) -> _Queue:
        q = self._queues.get(name)
        if q is None:
            raise UnknownQueueError(f"unknown queue {name!r}")
        return q

    def _ensure_open(self) -> None:
        if self._closed:
            raise BrokerClosedError("broker is closed")


def _numeric_suffix(msg_id: str) -> int | None:
    if msg_id.startswith("m") and msg_id[1:].isdigit():
        return int(msg_id[1:])
    return None


def drain(
    broker: MessageBroker, queue: str, consumer: str, *, limit: int | None = None
) -> Iterator[Delivery]:
    """Yield deliveries until the queue has no visible message. The caller is
    responsible for acking each delivery."""
    count = 0
    while limit is None or count < limit:
        delivery = broker.dequeue(queue, consumer)
        if delivery is None:
            return
        count += 1
        yield delivery
