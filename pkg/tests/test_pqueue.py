from __future__ import annotations

import dataclasses
import random

import pytest

from blockgate import errors
from blockgate.certkit import issue_proxy
from blockgate.pqueue import (
    LEGAL_TRANSITIONS,
    JobRecord,
    JobState,
    create_queue,
    enqueue,
    next_runnable,
)
from conftest import PROXY_KEY

NODES4 = {"n00", "n01", "n02", "n03"}


def routed(job_id: str, user: str, nodes: int = 1, wall: int = 5) -> JobRecord:
    job = JobRecord(job_id, user, "true", nodes, wall)
    job.advance(JobState.AUTHENTICATED)
    job.advance(JobState.ROUTED)
    return job


def test_create_queue():
    q = create_queue("alice", NODES4, "alice")
    assert q.name == q.authorized_user == "alice"
    assert not q.pending


def test_create_queue_errors(queues):
    with pytest.raises(errors.NameMismatch):
        create_queue("q1", {"n00"}, "alice")
    with pytest.raises(errors.EmptyNodeSet):
        create_queue("alice", set(), "alice")
    queues.create_queue("alice", NODES4, "alice")
    with pytest.raises(errors.DuplicateQueue):
        queues.create_queue("alice", NODES4, "alice")


def test_enqueue_owner_job(alice_cert):
    q = create_queue("alice", NODES4, "alice")
    proxy = issue_proxy(alice_cert, 1000, 600, PROXY_KEY)
    first, second = routed("a-1", "alice", 2), routed("a-2", "alice", 1)
    enqueue(q, first, proxy, 1000, PROXY_KEY)
    enqueue(q, second, proxy, 1000, PROXY_KEY)
    assert list(q.pending) == ["a-1", "a-2"]
    assert first.state is JobState.QUEUED and first.queue == "alice"


def test_enqueue_rejects_other_user(bob_cert):
    q = create_queue("alice", NODES4, "alice")
    job = routed("b-1", "bob")
    with pytest.raises(errors.NotAuthorized):
        enqueue(q, job, issue_proxy(bob_cert, 1000, 600, PROXY_KEY), 1000, PROXY_KEY)
    assert job.state is JobState.REJECTED and job.reason == "NotAuthorized"
    assert not q.pending


def test_enqueue_rejects_oversized(alice_cert):
    q = create_queue("alice", NODES4, "alice")
    job = routed("a-1", "alice", 5)
    with pytest.raises(errors.OversizedJob):
        enqueue(q, job, issue_proxy(alice_cert, 1000, 600, PROXY_KEY), 1000, PROXY_KEY)
    assert job.state is JobState.REJECTED


def test_enqueue_rechecks_proxy(alice_cert):
    q = create_queue("alice", NODES4, "alice")
    proxy = issue_proxy(alice_cert, 1000, 600, PROXY_KEY)
    with pytest.raises(errors.ProxyExpired):
        enqueue(q, routed("a-1", "alice"), proxy, 1600, PROXY_KEY)
    with pytest.raises(errors.ProxyForged):
        enqueue(q, routed("a-2", "alice"), dataclasses.replace(proxy, expires_at=9999), 1000, PROXY_KEY)
    with pytest.raises(errors.ProxyForged):
        enqueue(q, routed("a-3", "alice"), proxy, 1000, b"other key")
    assert not q.pending


def test_enqueue_requires_routed_state(alice_cert):
    q = create_queue("alice", NODES4, "alice")
    job = JobRecord("a-1", "alice", "true", 1, 1)
    with pytest.raises(errors.BadState):
        enqueue(q, job, issue_proxy(alice_cert, 0, 10, PROXY_KEY), 0, PROXY_KEY)
    assert job.state is JobState.RECEIVED


def test_next_runnable(alice_cert):
    q = create_queue("alice", NODES4, "alice")
    proxy = issue_proxy(alice_cert, 0, 600, PROXY_KEY)
    jobs = {}
    assert next_runnable(q, NODES4, jobs) is None
    for jid, n in (("a-1", 4), ("a-2", 1)):
        jobs[jid] = routed(jid, "alice", n)
        enqueue(q, jobs[jid], proxy, 0, PROXY_KEY)
    # head needs 4, only 2 free: no backfill of the 1-node job
    assert next_runnable(q, {"n00", "n01"}, jobs) is None
    assert next_runnable(q, NODES4, jobs) is jobs["a-1"]
    assert list(q.pending) == ["a-1", "a-2"]  # pure read


def test_next_runnable_head_fits():
    q = create_queue("alice", NODES4, "alice")
    job = routed("a-1", "alice", 2)
    job.advance(JobState.QUEUED)
    q.pending.append("a-1")
    assert next_runnable(q, {"n00", "n01", "n02"}, {"a-1": job}) is job


def test_state_machine_rejects_illegal_arrows():
    legal = {(a, b) for a, targets in LEGAL_TRANSITIONS.items() for b in targets}
    for src in JobState:
        for dst in JobState:
            job = JobRecord("j", "alice", "true", 1, 1)
            job.state = src
            if (src, dst) in legal:
                job.advance(dst)
                assert job.state is dst
            else:
                with pytest.raises(errors.IllegalTransition):
                    job.advance(dst)
    # Rejected is reachable from every pre-Running state and nothing later
    pre_running = {JobState.RECEIVED, JobState.AUTHENTICATED, JobState.ROUTED, JobState.QUEUED}
    assert {s for s in JobState if JobState.REJECTED in LEGAL_TRANSITIONS[s]} == pre_running


def test_owner_only_under_adversarial_submissions(grid1, grid2, queues):
    from blockgate.certkit import ca_issue

    rng = random.Random(11)
    users = ["alice", "bob", "carol", "dave"]
    certs = {u: ca_issue(rng.choice([grid1, grid2]), u, 0, 10_000) for u in users}
    for u, size in zip(users, (4, 2, 3, 1)):
        queues.create_queue(u, {f"{u}{i}" for i in range(size)}, u)
    admitted_wrongly = 0
    for i in range(2000):
        qname = rng.choice(users)
        requester = rng.choice(users)
        proxy_user = requester if rng.random() < 0.7 else rng.choice(users)
        proxy = issue_proxy(certs[proxy_user], 100, 600, PROXY_KEY)
        attack = rng.choice(["none", "forge", "expire", "oversize"])
        nodes = rng.randint(1, 4)
        now = 200
        if attack == "forge":
            proxy = dataclasses.replace(proxy, subject_username=rng.choice(users))
            if proxy.subject_username == proxy_user:
                proxy = dataclasses.replace(proxy, issued_at=99)
        elif attack == "expire":
            now = 700
        elif attack == "oversize":
            nodes = len(queues.get(qname).allowed_nodes) + 1
        job = routed(f"j{i}", requester, nodes)
        should_pass = (
            attack == "none"
            and requester == proxy_user == qname
            and nodes <= len(queues.get(qname).allowed_nodes)
        )
        try:
            queues.enqueue(qname, job, proxy, now)
            admitted = True
        except (errors.NotAuthorized, errors.ProxyForged, errors.ProxyExpired, errors.OversizedJob) as exc:
            admitted = False
            assert job.state is JobState.REJECTED and job.reason == exc.code
        assert admitted == should_pass
        if admitted and requester != qname:
            admitted_wrongly += 1
    assert admitted_wrongly == 0
    for q in queues.queues.values():
        assert all(queues.jobs[j].requester == q.name for j in q.pending)
