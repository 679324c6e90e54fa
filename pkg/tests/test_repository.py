from __future__ import annotations

import random

import pytest

from dispatchq.model import JobRecord, JobStatus, ProcessorInfo, SchedulingPolicy
from dispatchq.repository import (
    DuplicateJobError,
    DuplicateProcessorError,
    IllegalTransitionError,
    JobDefinition,
    Repository,
    UnknownDefinitionError,
    UnknownJobError,
    UnknownProcessorError,
)


@pytest.fixture
def repo(tmp_path):
    r = Repository(tmp_path / "repo.jlog")
    yield r
    r.close()


def make_job(job_id="J-000001", priority=1, submitted_at=100):
    return JobRecord(
        id=job_id,
        definition_id="primes-count:10",
        priority=priority,
        policy=SchedulingPolicy.least_load(),
        status=JobStatus.SUBMITTED,
        submitted_at=submitted_at,
    )


class TestDefinitions:
    def test_round_trip(self, repo):
        defn = JobDefinition("primes-count:10", "PRIME_COUNT", {"target_count": 10}, default_priority=1)
        repo.add_definition(defn)
        assert repo.get_definition("primes-count:10") == defn

    def test_unknown(self, repo):
        with pytest.raises(UnknownDefinitionError):
            repo.get_definition("nope")


class TestRegistry:
    def test_register_and_availability_needs_first_heartbeat(self, repo):
        repo.register_processor(ProcessorInfo("P1", 10, 5.0))
        assert repo.list_available_processors(now=0, liveness_window_ms=1000) == []
        repo.update_processor_status("P1", load=0, heartbeat_at=0)
        snaps = repo.list_available_processors(now=0, liveness_window_ms=1000)
        assert [s.id for s in snaps] == ["P1"]
        assert snaps[0].cost_factor == 5.0
        assert snaps[0].pool_capacity_total == 20

    def test_duplicate_explicit_id(self, repo):
        repo.register_processor(ProcessorInfo("P1"))
        with pytest.raises(DuplicateProcessorError):
            repo.register_processor(ProcessorInfo("P1"))

    def test_register_five_heartbeat_three(self, repo):
        for i in range(5):
            repo.register_processor(ProcessorInfo(f"P{i}"))
        for i in range(3):
            repo.update_processor_status(f"P{i}", load=i, heartbeat_at=50)
        snaps = repo.list_available_processors(now=60, liveness_window_ms=1000)
        assert [s.id for s in snaps] == ["P0", "P1", "P2"]

    def test_update_load(self, repo):
        repo.register_processor(ProcessorInfo("P1"))
        repo.update_processor_status("P1", load=4, heartbeat_at=10)
        (snap,) = repo.list_available_processors(now=10, liveness_window_ms=100)
        assert snap.current_load == 4

    def test_stale_update_ignored(self, repo):
        repo.register_processor(ProcessorInfo("P1"))
        repo.update_processor_status("P1", load=4, heartbeat_at=100)
        repo.update_processor_status("P1", load=9, heartbeat_at=50)  # older: ignored
        (snap,) = repo.list_available_processors(now=100, liveness_window_ms=100)
        assert snap.current_load == 4
        assert snap.last_heartbeat == 100

    def test_interleaved_updates_keep_max_timestamp(self, repo):
        repo.register_processor(ProcessorInfo("P1"))
        updates = [(load, ts) for load, ts in [(1, 10), (5, 40), (3, 20), (2, 40), (9, 30)]]
        for load, ts in updates:
            repo.update_processor_status("P1", load=load, heartbeat_at=ts)
        (snap,) = repo.list_available_processors(now=50, liveness_window_ms=100)
        assert snap.last_heartbeat == 40
        assert snap.current_load == 2  # latest applied at the max timestamp

    def test_unknown_processor(self, repo):
        with pytest.raises(UnknownProcessorError):
            repo.update_processor_status("ghost", load=0, heartbeat_at=0)

    def test_window_sweep_matches_brute_force(self, repo):
        heartbeats = {"P0": 100, "P1": 250, "P2": 400, "P3": 1000}
        for pid, hb in heartbeats.items():
            repo.register_processor(ProcessorInfo(pid))
            repo.update_processor_status(pid, load=0, heartbeat_at=hb)
        now = 1100
        for window in range(0, 1200, 50):
            got = [s.id for s in repo.list_available_processors(now, window)]
            expected = sorted(pid for pid, hb in heartbeats.items() if now - hb <= window)
            assert got == expected


class TestJobLifecycle:
    def test_wait_time_derivation(self, repo):
        repo.record_job(make_job(submitted_at=100))
        repo.update_job_status("J-000001", JobStatus.DISPATCHED, at=100)
        repo.update_job_status("J-000001", JobStatus.SCHEDULED, at=120, target="P1")
        record = repo.update_job_status("J-000001", JobStatus.IN_PROGRESS, at=500)
        assert record.wait_ms == 400
        assert record.started_at == 500
        assert record.target == "P1"

    def test_total_is_wait_plus_processing(self, repo):
        repo.record_job(make_job(submitted_at=100))
        repo.update_job_status("J-000001", JobStatus.DISPATCHED, at=100)
        repo.update_job_status("J-000001", JobStatus.SCHEDULED, at=110, target="P1")
        repo.update_job_status("J-000001", JobStatus.IN_PROGRESS, at=500)
        record = repo.update_job_status(
            "J-000001", JobStatus.COMPLETED, at=1700, result={"count": 10, "largest": 29}
        )
        assert record.processing_ms == 1200
        assert record.total_ms == record.wait_ms + record.processing_ms == 1600
        assert record.result_payload == {"count": 10, "largest": 29}

    def test_completed_before_in_progress_rejected(self, repo):
        repo.record_job(make_job())
        repo.update_job_status("J-000001", JobStatus.DISPATCHED, at=100)
        with pytest.raises(IllegalTransitionError):
            repo.update_job_status("J-000001", JobStatus.COMPLETED, at=200)

    def test_duplicate_record_rejected(self, repo):
        repo.record_job(make_job())
        with pytest.raises(DuplicateJobError):
            repo.record_job(make_job())

    def test_unknown_job(self, repo):
        with pytest.raises(UnknownJobError):
            repo.update_job_status("ghost", JobStatus.DISPATCHED, at=0)

    def test_aborted_from_dispatched(self, repo):
        repo.record_job(make_job())
        repo.update_job_status("J-000001", JobStatus.DISPATCHED, at=100)
        record = repo.update_job_status("J-000001", JobStatus.ABORTED, at=150)
        assert record.status is JobStatus.ABORTED
        assert record.finished_at == 150
        assert record.total_ms is None

    def test_progress_updates_do_not_touch_lifecycle(self, repo):
        repo.record_job(make_job())
        repo.update_job_status("J-000001", JobStatus.DISPATCHED, at=100)
        repo.set_progress("J-000001", 0.5, at=200)
        record = repo.get_job("J-000001")
        assert record.status is JobStatus.DISPATCHED
        assert record.latest_progress == 0.5
        repo.set_progress("J-000001", 0.25, at=300)  # stale fraction ignored
        assert repo.get_job("J-000001").latest_progress == 0.5


class TestQueries:
    def test_empty_filter(self, repo):
        assert repo.query_jobs(status=JobStatus.COMPLETED) == []

    def test_priority_filter(self, repo):
        for i, prio in enumerate([1, 1, 0]):
            repo.record_job(make_job(f"J-{i:06d}", priority=prio))
        highs = repo.query_jobs(priority=1)
        assert [r.id for r in highs] == ["J-000000", "J-000001"]

    def test_random_population_matches_brute_force(self, repo):
        rng = random.Random(7)
        statuses = [JobStatus.SUBMITTED, JobStatus.DISPATCHED]
        jobs = []
        for i in range(200):
            job = make_job(f"J-{i:06d}", priority=rng.choice([0, 1]))
            repo.record_job(job)
            if rng.random() < 0.5:
                job = repo.update_job_status(job.id, JobStatus.DISPATCHED, at=10)
            jobs.append(job)
        for status in statuses:
            for priority in (0, 1):
                got = repo.query_jobs(status=status, priority=priority)
                expected = sorted(
                    (j for j in jobs if j.status is status and j.priority == priority),
                    key=lambda j: j.id,
                )
                assert got == expected

    def test_targeted_active_counts(self, repo):
        for i in range(4):
            repo.record_job(make_job(f"J-{i:06d}"))
            repo.update_job_status(f"J-{i:06d}", JobStatus.DISPATCHED, at=10)
        repo.update_job_status("J-000000", JobStatus.SCHEDULED, at=20, target="P1")
        repo.update_job_status("J-000001", JobStatus.SCHEDULED, at=20, target="P1")
        repo.update_job_status("J-000002", JobStatus.SCHEDULED, at=20, target="P2")
        assert repo.targeted_active_counts() == {"P1": 2, "P2": 1}
        repo.update_job_status("J-000000", JobStatus.IN_PROGRESS, at=30)
        assert repo.targeted_active_counts() == {"P1": 2, "P2": 1}
        repo.update_job_status("J-000000", JobStatus.COMPLETED, at=40)
        assert repo.targeted_active_counts() == {"P1": 1, "P2": 1}


class TestDurability:
    def test_reopen_returns_identical_results(self, tmp_path):
        path = tmp_path / "repo.jlog"
        repo = Repository(path)
        repo.add_definition(JobDefinition("d1", "PRIME_COUNT", {"target_count": 5}))
        repo.register_processor(ProcessorInfo("P1", 10, 2.5))
        repo.update_processor_status("P1", load=3, heartbeat_at=77)
        repo.record_job(make_job())
        repo.update_job_status("J-000001", JobStatus.DISPATCHED, at=110)
        repo.update_job_status("J-000001", JobStatus.SCHEDULED, at=120, target="P1")
        before_jobs = repo.query_jobs()
        before_procs = repo.list_processors()
        repo.close()

        reopened = Repository(path)
        assert reopened.query_jobs() == before_jobs
        assert reopened.list_processors() == before_procs
        assert reopened.get_definition("d1").workload_params == {"target_count": 5}
        assert reopened.targeted_active_counts() == {"P1": 1}
        reopened.close()
