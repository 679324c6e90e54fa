from __future__ import annotations

import pytest

from dispatchq.workload import (
    PrimeCountParams,
    PrimeRun,
    PrimeTimedParams,
    build_run,
    nth_prime,
    params_payload,
    sieve_primes,
)

# frozen from the sieve oracle
NTH_PRIME_FIXTURES = {
    1: 2,
    5: 11,
    25: 97,
    2000: 17389,
    5000: 48611,
    10000: 104729,
    20000: 224737,
}


@pytest.mark.parametrize("n,expected", sorted(NTH_PRIME_FIXTURES.items()))
def test_nth_prime_oracle(n, expected):
    assert nth_prime(n) == expected


def test_sieve_small():
    assert sieve_primes(11) == [2, 3, 5, 7, 11]
    assert sieve_primes(1) == []


def test_fresh_chunk_budget_10_finds_five_primes():
    run = PrimeRun(target_count=100)
    finished = run.run_chunk(10)  # candidates 2..11
    assert not finished
    assert run.count == 5
    assert run.largest == 11
    assert run.next_candidate == 12


def test_count_run_stops_at_target():
    run = PrimeRun(target_count=5)
    finished = run.run_chunk(1000)
    assert finished
    result = run.result()
    assert result.count == 5
    assert result.largest == 11
    assert result.chunks_executed == 1


def test_first_prime():
    run = PrimeRun(target_count=1)
    assert run.run_chunk(1000)
    assert run.result().count == 1
    assert run.result().largest == 2


def test_finished_run_rejects_further_chunks():
    run = PrimeRun(target_count=1)
    run.run_chunk(10)
    with pytest.raises(RuntimeError):
        run.run_chunk(10)


def test_chunk_splitting_is_associative():
    whole = PrimeRun(target_count=10**9)
    whole.run_chunk(100)
    split = PrimeRun(target_count=10**9)
    for _ in range(10):
        split.run_chunk(10)
    assert (split.count, split.largest, split.next_candidate) == (
        whole.count,
        whole.largest,
        whole.next_candidate,
    )


@pytest.mark.parametrize("n", [25, 500, 2000])
def test_count_run_largest_matches_oracle(n):
    run = PrimeRun(target_count=n)
    while not run.run_chunk(1000):
        pass
    assert run.result().largest == nth_prime(n)
    assert run.result().count == n


def test_timed_run_counts_are_monotone_in_slices():
    run = PrimeRun(time_limit_ms=1000)
    counts = []
    for _ in range(20):
        run.run_chunk(500)
        counts.append(run.count)
    assert counts == sorted(counts)
    assert not run.finished  # only the engine's deadline finishes a timed run
    run.mark_finished()
    with pytest.raises(RuntimeError):
        run.run_chunk(10)


def test_params_validation():
    with pytest.raises(ValueError):
        PrimeCountParams(0)
    with pytest.raises(ValueError):
        PrimeTimedParams(0)
    assert PrimeCountParams(20000).definition_id == "primes-count:20000"
    assert PrimeTimedParams(2000).definition_id == "primes-timed:2000"


def test_build_run_from_params_payload():
    kind, params = params_payload(PrimeCountParams(7))
    run = build_run(kind, params)
    assert run.target_count == 7
    kind, params = params_payload(PrimeTimedParams(250))
    run = build_run(kind, params)
    assert run.time_limit_ms == 250
    with pytest.raises(ValueError):
        build_run("FFT", {})


def test_progress_fraction():
    count_run = PrimeRun(target_count=10)
    count_run.run_chunk(10)  # 5 primes
    assert count_run.progress_fraction(999) == 0.5
    timed_run = PrimeRun(time_limit_ms=200)
    assert timed_run.progress_fraction(50) == 0.25
    assert timed_run.progress_fraction(400) == 1.0
