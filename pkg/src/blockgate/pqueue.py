"""PBS-style queues, one per block, plus the job lifecycle.

A queue is named after the user who owns the block. It only accepts that
user's jobs and only runs them on the block's nodes. Dispatch is strict
FIFO with no backfill.
"""

from __future__ import annotations

import enum
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from blockgate import errors
from blockgate.certkit import ProxyCredential, raise_for_proxy, verify_proxy


class JobState(enum.Enum):
    RECEIVED = "Received"
    AUTHENTICATED = "Authenticated"
    ROUTED = "Routed"
    QUEUED = "Queued"
    RUNNING = "Running"
    COMPLETED = "Completed"
    REJECTED = "Rejected"


LEGAL_TRANSITIONS: dict[JobState, frozenset[JobState]] = {
    JobState.RECEIVED: frozenset({JobState.AUTHENTICATED, JobState.REJECTED}),
    JobState.AUTHENTICATED: frozenset({JobState.ROUTED, JobState.REJECTED}),
    JobState.ROUTED: frozenset({JobState.QUEUED, JobState.REJECTED}),
    JobState.QUEUED: frozenset({JobState.RUNNING, JobState.REJECTED}),
    JobState.RUNNING: frozenset({JobState.COMPLETED}),
    JobState.COMPLETED: frozenset(),
    JobState.REJECTED: frozenset(),
}


@dataclass
class JobRecord:
    job_id: str
    requester: str
    command: str
    nodes_requested: int
    walltime_s: int
    state: JobState = JobState.RECEIVED
    queue: str | None = None
    assigned_nodes: tuple[str, ...] = ()
    start_time: int | None = None
    end_time: int | None = None
    reason: str | None = None
    history: list[JobState] = field(default_factory=lambda: [JobState.RECEIVED])

    def __post_init__(self) -> None:
        if self.nodes_requested < 1 or self.walltime_s < 1:
            raise ValueError("nodes_requested and walltime_s must be >= 1")

    def advance(self, new: JobState, **detail) -> None:
        if new not in LEGAL_TRANSITIONS[self.state]:
            raise errors.IllegalTransition(f"{self.job_id}: {self.state.value} -> {new.value}")
        for key, value in detail.items():
            setattr(self, key, value)
        self.state = new
        self.history.append(new)

    def reject(self, reason: str) -> None:
        self.advance(JobState.REJECTED, reason=reason)

    def to_dict(self) -> dict:
        doc = {
            "job_id": self.job_id,
            "state": self.state.value,
            "requester": self.requester,
            "queue": self.queue,
            "command": self.command,
            "nodes": self.nodes_requested,
            "walltime_s": self.walltime_s,
        }
        if self.state in (JobState.RUNNING, JobState.COMPLETED):
            doc["assigned_nodes"] = list(self.assigned_nodes)
            doc["start_time"] = self.start_time
        if self.state is JobState.COMPLETED:
            doc["end_time"] = self.end_time
        if self.state is JobState.REJECTED:
            doc["reason"] = self.reason
        return doc


@dataclass
class Queue:
    name: str
    authorized_user: str
    allowed_nodes: frozenset[str]
    pending: deque[str] = field(default_factory=deque)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)


def create_queue(name: str, allowed_nodes: Iterable[str], authorized_user: str) -> Queue:
    if name != authorized_user:
        raise errors.NameMismatch(f"queue {name!r} must be named after its user {authorized_user!r}")
    nodes = frozenset(allowed_nodes)
    if not nodes:
        raise errors.EmptyNodeSet(f"queue {name!r} has no nodes")
    return Queue(name, authorized_user, nodes)


def enqueue(q: Queue, job: JobRecord, proxy: ProxyCredential, now: int, proxy_key: bytes) -> str:
    """Admit a routed job, re-checking the proxy credential first.

    Any admission failure moves the job to Rejected before the error is
    raised, so callers never see a Routed job left dangling.
    """
    with q.lock:
        if job.state is not JobState.ROUTED:
            raise errors.BadState(f"{job.job_id} is {job.state.value}, expected Routed")
        try:
            raise_for_proxy(verify_proxy(proxy, now, proxy_key))
            if not (proxy.subject_username == q.authorized_user == job.requester):
                raise errors.NotAuthorized(
                    f"queue {q.name!r} belongs to {q.authorized_user!r}; "
                    f"job from {job.requester!r} with proxy for {proxy.subject_username!r}"
                )
            if job.nodes_requested > len(q.allowed_nodes):
                raise errors.OversizedJob(
                    f"{job.nodes_requested} nodes requested, block {q.name!r} has {len(q.allowed_nodes)}"
                )
        except errors.BlockgateError as exc:
            job.reject(exc.code)
            raise
        job.advance(JobState.QUEUED, queue=q.name)
        q.pending.append(job.job_id)
    return job.job_id


def next_runnable(q: Queue, free_in_block: Iterable[str], jobs: dict[str, JobRecord]) -> JobRecord | None:
    if not q.pending:
        return None
    head = jobs[q.pending[0]]
    return head if head.nodes_requested <= len(set(free_in_block)) else None


class QueueTable:
    """All queues on the gateway plus the jobs they have seen."""

    def __init__(self, proxy_key: bytes):
        self._proxy_key = proxy_key
        self.queues: dict[str, Queue] = {}
        self.jobs: dict[str, JobRecord] = {}
        self._lock = threading.RLock()

    def create_queue(self, name: str, allowed_nodes: Iterable[str], authorized_user: str) -> Queue:
        q = create_queue(name, allowed_nodes, authorized_user)
        with self._lock:
            if name in self.queues:
                raise errors.DuplicateQueue(f"queue {name!r} already exists")
            self.queues[name] = q
        return q

    def delete_queue(self, name: str) -> list[JobRecord]:
        """Drop a queue; jobs still pending in it are rejected and returned."""
        with self._lock:
            q = self.queues.pop(name, None)
        if q is None:
            raise errors.UnknownQueue(f"no queue {name!r}")
        dropped = []
        with q.lock:
            while q.pending:
                job = self.jobs[q.pending.popleft()]
                job.reject("BlockReleased")
                dropped.append(job)
        return dropped

    def get(self, name: str) -> Queue:
        try:
            return self.queues[name]
        except KeyError:
            raise errors.UnknownQueue(f"no queue {name!r}") from None

    def track(self, job: JobRecord) -> None:
        with self._lock:
            self.jobs[job.job_id] = job

    def enqueue(self, name: str, job: JobRecord, proxy: ProxyCredential, now: int) -> str:
        self.track(job)
        try:
            q = self.get(name)
        except errors.UnknownQueue:
            if job.state is JobState.ROUTED:
                job.reject(errors.UnknownQueue.code)
            raise
        return enqueue(q, job, proxy, now, self._proxy_key)

    def next_runnable(self, name: str, free_in_block: Iterable[str]) -> JobRecord | None:
        return next_runnable(self.get(name), free_in_block, self.jobs)

    def pending_count(self) -> int:
        return sum(len(q.pending) for q in self.queues.values())

    def lengths(self) -> dict[str, int]:
        return {name: len(q.pending) for name, q in sorted(self.queues.items())}
