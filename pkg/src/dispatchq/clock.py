"""Millisecond clocks: a real monotonic clock and a virtual clock for deterministic runs."""

from __future__ import annotations

import time
from typing import Protocol, runtime_checkable


@runtime_checkable
class Clock(Protocol):
    def now_ms(self) -> int: ...


class MonotonicClock:
    """Wall clock; integer milliseconds since construction."""

    def __init__(self) -> None:
        self._epoch_ns = time.monotonic_ns()

    def now_ms(self) -> int:
        return (time.monotonic_ns() - self._epoch_ns) // 1_000_000


class VirtualClock:
    """Clock that only moves when the owning loop advances it."""

    def __init__(self, start_ms: int = 0) -> None:
        self._now_ms = start_ms

    def now_ms(self) -> int:
        return self._now_ms

    def advance(self, delta_ms: int = 1) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now_ms += delta_ms
        return self._now_ms
