"""The routing web service: certificate in, queue decision out.

``route`` runs a fixed pipeline and stops at the first failure:

1. verify the certificate against the trust store
2. take the username out of the certificate
3. reject if the claimed username disagrees with the certificate
4. look up the queue of the block that user owns
5. check the requested middleware against the block's activated one
6. mint a proxy credential for the second authentication stage
7. emit the decision together with a Routed job record

Nothing here mutates the registry.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from blockgate import errors
from blockgate.certkit import (
    Certificate,
    ProxyCredential,
    TrustStore,
    extract_username,
    issue_proxy,
    verify_certificate,
)
from blockgate.pqueue import JobRecord, JobState
from blockgate.registry import BlockAllocation, Registry

DEFAULT_PROXY_TTL_S = 3600


@dataclass(frozen=True)
class JobRequest:
    claimed_username: str
    certificate: Certificate
    middleware: str
    command: str
    nodes_requested: int
    walltime_s: int

    def __post_init__(self) -> None:
        if self.nodes_requested < 1 or self.walltime_s < 1:
            raise ValueError("nodes_requested and walltime_s must be >= 1")


class MiddlewareCatalog(Mapping[str, str]):
    """Middleware name -> installation directory. Directories must differ."""

    def __init__(self, entries: Mapping[str, str]):
        table = dict(entries)
        if not table:
            raise ValueError("middleware catalog is empty")
        for name, path in table.items():
            if not name or not path:
                raise ValueError(f"empty middleware name or path: {name!r} -> {path!r}")
        if len(set(table.values())) != len(table):
            raise ValueError("two middlewares share one directory")
        self._entries = MappingProxyType(table)

    def __getitem__(self, name: str) -> str:
        return self._entries[name]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"MiddlewareCatalog({dict(self._entries)!r})"


@dataclass(frozen=True)
class RoutingDecision:
    job_id: str
    queue_name: str
    block_id: str
    middleware_path: str
    proxy: ProxyCredential
    job: JobRecord = field(compare=False, repr=False)


def resolve_middleware(allocation: BlockAllocation, requested: str, catalog: Mapping[str, str]) -> str:
    if requested != allocation.middleware:
        raise errors.MiddlewareMismatch(
            f"block {allocation.block_id} runs {allocation.middleware!r}, request asked for {requested!r}"
        )
    try:
        return catalog[allocation.middleware]
    except KeyError:
        raise errors.UnknownMiddleware(
            f"activated middleware {allocation.middleware!r} missing from catalog"
        ) from None


class WSPCRouter:
    """Holds the trust/config the pipeline needs and the job-id counter."""

    def __init__(
        self,
        store: TrustStore,
        registry: Registry,
        catalog: Mapping[str, str],
        proxy_key: bytes,
        proxy_ttl_s: int = DEFAULT_PROXY_TTL_S,
    ):
        self.store = store
        self.registry = registry
        self.catalog = catalog
        self.proxy_key = proxy_key
        self.proxy_ttl_s = proxy_ttl_s
        self._counter = itertools.count(1)
        self._counter_lock = threading.Lock()

    def _next_job_id(self, username: str, generation: int) -> str:
        with self._counter_lock:
            n = next(self._counter)
        return f"{username}-{generation}-{n}"

    def route(self, req: JobRequest, now: int) -> RoutingDecision:
        outcome = verify_certificate(req.certificate, self.store, now)
        if not outcome.ok:
            raise errors.AuthRejected(outcome)
        username = extract_username(req.certificate)
        if req.claimed_username != username:
            raise errors.UsernameMismatch(
                f"claimed {req.claimed_username!r} but certificate names {username!r}"
            )
        reg = self.registry
        generation = reg.generation
        allocation = reg.lookup_allocation(username, now)
        path = resolve_middleware(allocation, req.middleware, self.catalog)
        proxy = issue_proxy(req.certificate, now, self.proxy_ttl_s, self.proxy_key)

        job_id = self._next_job_id(username, generation)
        job = JobRecord(job_id, username, req.command, req.nodes_requested, req.walltime_s)
        job.advance(JobState.AUTHENTICATED)
        job.advance(JobState.ROUTED, queue=allocation.queue_name)
        return RoutingDecision(job_id, allocation.queue_name, allocation.block_id, path, proxy, job)


def route(
    req: JobRequest,
    store: TrustStore,
    reg: Registry,
    catalog: Mapping[str, str],
    proxy_key: bytes,
    now: int,
    proxy_ttl_s: int = DEFAULT_PROXY_TTL_S,
) -> RoutingDecision:
    """One-shot form of :meth:`WSPCRouter.route` (job counter starts at 1)."""
    return WSPCRouter(store, reg, catalog, proxy_key, proxy_ttl_s).route(req, now)
