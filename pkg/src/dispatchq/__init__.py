"""dispatchq: queue-based job processing with dynamic load balancing.

A dispatcher validates and records submissions, a policy-driven scheduler picks
the least-loaded / cheapest / blended-best live processor, and processors run
jobs in weighted priority pools, reporting progress and heartbeats to a monitor
that keeps the central repository current. All components talk only through
durable broker queues and the repository.
"""

from .broker import Delivery, MessageBroker
from .clock import Clock, MonotonicClock, VirtualClock
from .dispatcher import Dispatcher, JobRequestOptions
from .model import (
    JobRecord,
    JobStatus,
    Message,
    MessageKind,
    Priority,
    ProcessorInfo,
    SchedulingPolicy,
)
from .monitor import Monitor
from .processor import PoolConfig, PoolEngine, PriorityWorkerPool, Processor
from .repository import JobDefinition, ProcessorSnapshot, Repository
from .scheduler import Scheduler, select_target
from .workload import PrimeCountParams, PrimeResult, PrimeRun, PrimeTimedParams, nth_prime

__version__ = "0.1.0"

__all__ = [
    "Clock",
    "Delivery",
    "Dispatcher",
    "JobDefinition",
    "JobRecord",
    "JobRequestOptions",
    "JobStatus",
    "Message",
    "MessageBroker",
    "MessageKind",
    "Monitor",
    "MonotonicClock",
    "PoolConfig",
    "PoolEngine",
    "Priority",
    "PriorityWorkerPool",
    "PrimeCountParams",
    "PrimeResult",
    "PrimeRun",
    "PrimeTimedParams",
    "Processor",
    "ProcessorInfo",
    "ProcessorSnapshot",
    "Repository",
    "Scheduler",
    "SchedulingPolicy",
    "VirtualClock",
    "nth_prime",
    "select_target",
]
