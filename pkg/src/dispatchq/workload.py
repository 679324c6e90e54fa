"""Prime-computation workloads, written as resumable chunked runs.

A chunk advances primality testing by at most ``budget`` candidate integers, so
the pool engine can interleave many jobs and grant compute in weighted slices.
Job primality uses trial division on purpose: it is the CPU-heavy part of the
workload. The sieve below is a separate implementation reserved for oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

WORKLOAD_PRIME_COUNT = "PRIME_COUNT"
WORKLOAD_PRIME_TIMED = "PRIME_TIMED"

DEFAULT_CHUNK_BUDGET = 1000


@dataclass(frozen=True)
class PrimeCountParams:
    """Compute primes until target_count of them have been found."""

    target_count: int

    def __post_init__(self) -> None:
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")

    @property
    def definition_id(self) -> str:
        return f"primes-count:{self.target_count}"


@dataclass(frozen=True)
class PrimeTimedParams:
    """Compute primes for a fixed period; the count is the result."""

    duration_ms: int

    def __post_init__(self) -> None:
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be > 0")

    @property
    def definition_id(self) -> str:
        return f"primes-timed:{self.duration_ms}"


@dataclass(frozen=True)
class PrimeResult:
    count: int
    largest: int
    chunks_executed: int

    def to_payload(self) -> dict[str, Any]:
        return {"count": self.count, "largest": self.largest, "chunks_executed": self.chunks_executed}


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0 or n % 3 == 0:
        return False
    d = 5
    while d * d <= n:
        if n % d == 0 or n % (d + 2) == 0:
            return False
        d += 6
    return True


class PrimeRun:
    """Resumable prime search. Deterministic: the state after examining k
    candidates is independent of how those k were split into chunks."""

    def __init__(self, *, target_count: int | None = None, time_limit_ms: int | None = None) -> None:
        if (target_count is None) == (time_limit_ms is None):
            raise ValueError("exactly one of target_count / time_limit_ms must be set")
        self.target_count = target_count
        self.time_limit_ms = time_limit_ms
        self.next_candidate = 2
        self.count = 0
        self.largest = 0
        self.chunks_executed = 0
        self.finished = False

    def run_chunk(self, budget: int = DEFAULT_CHUNK_BUDGET) -> bool:
        """Examine up to ``budget`` further candidates; returns True when a
        count-bounded run reached its target. Calling a finished run is a
        contract violation."""
        if self.finished:
            raise RuntimeError("run_chunk called on a finished workload")
        if budget < 1:
            raise ValueError("budget must be >= 1")
        n = self.next_candidate
        remaining = budget
        while remaining > 0:
            if _is_prime(n):
                self.count += 1
                self.largest = n
                if self.target_count is not None and self.count >= self.target_count:
                    n += 1
                    self.finished = True
                    break
            n += 1
            remaining -= 1
        self.next_candidate = n
        self.chunks_executed += 1
        return self.finished

    def mark_finished(self) -> None:
        self.finished = True

    def progress_fraction(self, elapsed_ms: int) -> float:
        if self.target_count is not None:
            return min(1.0, self.count / self.target_count)
        return min(1.0, elapsed_ms / self.time_limit_ms)

    def result(self) -> PrimeResult:
        return PrimeResult(count=self.count, largest=self.largest, chunks_executed=self.chunks_executed)


def build_run(workload_kind: str, workload_params: Mapping[str, Any]) -> PrimeRun:
    if workload_kind == WORKLOAD_PRIME_COUNT:
        return PrimeRun(target_count=int(workload_params["target_count"]))
    if workload_kind == WORKLOAD_PRIME_TIMED:
        return PrimeRun(time_limit_ms=int(workload_params["duration_ms"]))
    raise ValueError(f"unknown workload kind {workload_kind!r}")


def params_payload(params: PrimeCountParams | PrimeTimedParams) -> tuple[str, dict[str, Any]]:
    if isinstance(params, PrimeCountParams):
        return WORKLOAD_PRIME_COUNT, {"target_count": params.target_count}
    return WORKLOAD_PRIME_TIMED, {"duration_ms": params.duration_ms}


# -- oracle ------------------------------------------------------------------

def sieve_primes(bound: int) -> list[int]:
    """All primes <= bound by sieve of Eratosthenes (independent of trial division)."""
    if bound < 2:
        return []
    flags = bytearray([1]) * (bound + 1)
    flags[0] = flags[1] = 0
    for p in range(2, int(bound**0.5) + 1):
        if flags[p]:
            flags[p * p :: p] = bytearray(len(range(p * p, bound + 1, p)))
    return [i for i in range(2, bound + 1) if flags[i]]


def nth_prime(n: int, *, max_bound: int = 50_000_000) -> int:
    """The n-th prime via sieve; an oracle for tests, not used by the workloads."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n < 6:
        bound = 15
    else:
        bound = int(n * (math.log(n) + math.log(math.log(n)))) + 10
    if bound > max_bound:
        raise ValueError(f"n={n} needs a sieve bound beyond the configured limit")
    primes = sieve_primes(bound)
    if len(primes) < n:  # estimate undershot; widen once
        primes = sieve_primes(min(max_bound, bound * 2))
        if len(primes) < n:
            raise ValueError(f"sieve bound too small for n={n}")
    return primes[n - 1]
