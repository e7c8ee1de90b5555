"""Discrete-time stand-in for the grid job-execution service.

Time moves in whole seconds. Each ``step`` first finishes jobs whose end
time has arrived, then walks the queues in name order and starts head jobs
on the first free nodes of their block for as long as FIFO allows. Commands
are never executed; a job just occupies its nodes for ``walltime_s``.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

from blockgate import errors
from blockgate.pqueue import JobRecord, JobState, QueueTable
from blockgate.registry import first_fit
from blockgate.router import RoutingDecision

log = logging.getLogger(__name__)

JOB_STARTED = "JobStarted"
JOB_COMPLETED = "JobCompleted"
JOB_REJECTED = "JobRejected"


@dataclass(frozen=True)
class Event:
    time: int
    kind: str
    job_id: str
    queue: str
    nodes: tuple[str, ...] = ()

    def line(self) -> str:
        return f"{self.time} {self.kind} {self.job_id} {self.queue} {','.join(self.nodes) or '-'}"

    @classmethod
    def parse(cls, line: str) -> Event:
        time, kind, job_id, queue, nodes = line.split(" ")
        return cls(int(time), kind, job_id, queue, () if nodes == "-" else tuple(nodes.split(",")))


@dataclass
class BlockUsage:
    queue: str
    size: int
    busy_node_seconds: int = 0
    jobs_completed: int = 0

    def utilization(self, elapsed: int) -> float:
        return self.busy_node_seconds / (self.size * elapsed) if elapsed > 0 and self.size else 0.0


@dataclass
class SimReport:
    steps: int
    clock: int
    jobs: dict[str, tuple[str, int, int]] = field(default_factory=dict)  # id -> (queue, start, end)
    blocks: dict[str, BlockUsage] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"steps={self.steps} clock={self.clock} jobs={len(self.jobs)}"]
        for name, usage in sorted(self.blocks.items()):
            out.append(
                f"block {name}: completed={usage.jobs_completed} "
                f"busy_node_s={usage.busy_node_seconds} util={usage.utilization(self.clock):.3f}"
            )
        return out


class GramSimulator:
    """Single-threaded engine; ``submit`` and ``step`` serialize on one lock."""

    def __init__(self, queues: QueueTable, clock: int = 0):
        self.queues = queues
        self.clock = clock
        self.running: dict[str, tuple[tuple[str, ...], int]] = {}
        self.events: list[Event] = []
        self._lock = threading.RLock()
        self._usage: dict[str, BlockUsage] = {}

    @property
    def lock(self) -> threading.RLock:
        return self._lock

    def submit(self, decision: RoutingDecision, job: JobRecord, now: int) -> str:
        """Hand a routed job to its queue; the queue re-checks the proxy."""
        if decision.job_id != job.job_id:
            raise errors.InternalInconsistency(
                f"decision is for {decision.job_id!r}, job record is {job.job_id!r}"
            )
        with self._lock:
            try:
                return self.queues.enqueue(decision.queue_name, job, decision.proxy, now)
            except errors.BlockgateError:
                self.events.append(Event(self.clock, JOB_REJECTED, job.job_id, decision.queue_name))
                raise

    def busy_nodes(self) -> set[str]:
        return {n for nodes, _ in self.running.values() for n in nodes}

    def free_in_block(self, queue_name: str) -> set[str]:
        return set(self.queues.get(queue_name).allowed_nodes) - self.busy_nodes()

    def _finish(self, job: JobRecord, at: int) -> Event:
        nodes, _ = self.running.pop(job.job_id)
        job.advance(JobState.COMPLETED, end_time=at)
        usage = self._usage.setdefault(job.queue, BlockUsage(job.queue, 0))
        usage.busy_node_seconds += len(nodes) * (at - job.start_time)
        usage.jobs_completed += 1
        return Event(at, JOB_COMPLETED, job.job_id, job.queue, nodes)

    def step(self) -> list[Event]:
        with self._lock:
            self.clock += 1
            now = self.clock
            new: list[Event] = []
            done = sorted(
                (self.queues.jobs[jid] for jid, (_, end) in self.running.items() if end == now),
                key=lambda j: (j.queue, j.job_id),
            )
            for job in done:
                new.append(self._finish(job, now))

            for name in sorted(self.queues.queues):
                q = self.queues.queues[name]
                self._usage.setdefault(name, BlockUsage(name, len(q.allowed_nodes))).size = len(q.allowed_nodes)
                with q.lock:
                    while True:
                        free = self.free_in_block(name)
                        job = self.queues.next_runnable(name, free)
                        if job is None:
                            break
                        q.pending.popleft()
                        nodes = first_fit(free, job.nodes_requested)
                        job.advance(JobState.RUNNING, assigned_nodes=nodes, start_time=now)
                        self.running[job.job_id] = (nodes, now + job.walltime_s)
                        new.append(Event(now, JOB_STARTED, job.job_id, name, nodes))
            self.events.extend(new)
        return new

    def abort_block(self, queue_name: str) -> list[Event]:
        """Tear down a released block: end its running jobs now, reject pending ones."""
        with self._lock:
            new = []
            running = sorted(
                jid for jid in self.running if self.queues.jobs[jid].queue == queue_name
            )
            for jid in running:
                new.append(self._finish(self.queues.jobs[jid], self.clock))
            for job in self.queues.delete_queue(queue_name):
                new.append(Event(self.clock, JOB_REJECTED, job.job_id, queue_name))
            self.events.extend(new)
        return new

    def has_work(self) -> bool:
        return bool(self.running) or self.queues.pending_count() > 0

    def run_to_completion(self, max_steps: int) -> SimReport:
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        steps = 0
        while self.has_work():
            if steps >= max_steps:
                raise errors.Timeout(max_steps)
            self.step()
            steps += 1
        return self.report(steps)

    def report(self, steps: int = 0) -> SimReport:
        with self._lock:
            jobs = {
                j.job_id: (j.queue, j.start_time, j.end_time)
                for j in self.queues.jobs.values()
                if j.state is JobState.COMPLETED
            }
            blocks = {k: BlockUsage(**vars(v)) for k, v in self._usage.items()}
            return SimReport(steps, self.clock, dict(sorted(jobs.items())), blocks)

    def job_status(self, job_id: str) -> JobRecord:
        try:
            return self.queues.jobs[job_id]
        except KeyError:
            raise errors.UnknownJob(f"no job {job_id!r}") from None

    def export_log(self) -> str:
        return "".join(e.line() + "\n" for e in self.events)

    def write_log(self, path: str | Path) -> None:
        Path(path).write_text(self.export_log(), encoding="utf-8")
