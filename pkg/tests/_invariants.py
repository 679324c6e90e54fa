"""Shared property-test helpers: the broker crash/recover invariant runner and
an independent brute-force scheduler oracle."""

from __future__ import annotations

import random

from dispatchq.broker import ExpiredTagError, MessageBroker
from dispatchq.clock import VirtualClock
from dispatchq.model import Message, MessageKind, PolicyKind, SchedulingPolicy


def _msg(payload):
    return Message(MessageKind.JOB_STATUS, created_at=0, payload=payload)


def random_ops_invariant_run(tmp_path, seed: int) -> None:
    """One randomized interleaving of enqueue/dequeue/ack/crash: the live
    (visible + in-flight) message set must always equal enqueued minus acked,
    and survivors must come back in enqueue (FIFO) order."""
    rng = random.Random(seed)
    clock = VirtualClock()
    root = tmp_path / f"b{seed}"
    broker = MessageBroker(root, clock, visibility_timeout_ms=rng.choice([5, 20, 100]))
    broker.create_queue("q")
    enqueued: list[str] = []
    acked: set[str] = set()
    in_flight: dict[str, str] = {}  # tag -> msg_id
    counter = 0

    for _ in range(rng.randint(10, 40)):
        op = rng.random()
        if op < 0.4:
            counter += 1
            enqueued.append(broker.enqueue("q", _msg({"n": counter})))
        elif op < 0.65:
            d = broker.dequeue("q", "c")
            if d is not None:
                assert d.message.msg_id not in acked, "acked message reappeared"
                in_flight[d.delivery_tag] = d.message.msg_id
        elif op < 0.85 and in_flight:
            tag = rng.choice(sorted(in_flight))
            mid = in_flight.pop(tag)
            try:
                broker.ack("q", tag)
                acked.add(mid)
            except ExpiredTagError:
                pass  # superseded by a redelivery after a clock jump
        elif op < 0.95:
            clock.advance(rng.randint(1, 50))
        else:
            broker.crash()
            broker = MessageBroker.recover(root, clock, visibility_timeout_ms=rng.choice([5, 20, 100]))
            in_flight.clear()

    broker.crash()
    broker = MessageBroker.recover(root, clock)
    survivors = []
    while (d := broker.dequeue("q", "c")) is not None:
        survivors.append(d.message.msg_id)
        broker.ack("q", d.delivery_tag)
    expected = [mid for mid in enqueued if mid not in acked]
    assert survivors == expected, f"seed {seed}: {survivors} != {expected}"
    broker.close()


def brute_force_select(policy: SchedulingPolicy, candidates):
    """Independent reimplementation of target selection: explicit loops, no
    shared code with the scheduler."""
    if policy.kind is PolicyKind.AFFINITY:
        ids = [c.id for c in candidates]
        return policy.processor if policy.processor in ids else None
    if not candidates:
        return None
    best_id = None
    best_key = None
    for c in candidates:
        if policy.kind is PolicyKind.LEAST_LOAD:
            key = float(c.current_load)
        elif policy.kind is PolicyKind.LEAST_COST:
            key = float(c.cost_factor)
        else:
            max_cost = max(x.cost_factor for x in candidates)
            load_term = c.current_load / c.pool_capacity_total
            cost_term = (c.cost_factor / max_cost) if max_cost > 0 else 0.0
            key = policy.alpha * load_term + (1 - policy.alpha) * cost_term
        if best_key is None or key < best_key or (key == best_key and c.id < best_id):
            best_key, best_id = key, c.id
    return best_id
