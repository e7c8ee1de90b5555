"""Wire-facing gateway: routing, admin allocation, status.

``Gateway.handle`` is transport-agnostic: it takes a method, path, headers
and raw body and returns ``(status, payload)``. The HTTP server in
:mod:`blockgate.gateway.http` is a thin shell around it.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import secrets
import threading
import time
from pathlib import Path
from typing import Callable, Mapping

from blockgate import errors
from blockgate.certkit import Certificate, TrustStore
from blockgate.gateway.config import GatewayConfig
from blockgate.gram_sim import JOB_COMPLETED, JOB_REJECTED, Event, GramSimulator
from blockgate.pqueue import JobState, QueueTable
from blockgate.registry import Registry, load_snapshot, save_snapshot
from blockgate.router import JobRequest, MiddlewareCatalog, WSPCRouter

log = logging.getLogger(__name__)

STATUS_BY_CODE: dict[str, int] = {
    "MalformedRequest": 400,
    # stage-one auth; AuthRejected reports its reason as the code
    "UnknownCA": 401,
    "BadSignature": 401,
    "Expired": 401,
    "NotYetValid": 401,
    "MalformedCertificate": 401,
    "UsernameMismatch": 401,
    # stage-two auth at enqueue
    "ProxyForged": 401,
    "ProxyExpired": 401,
    "BadAdminToken": 401,
    "NoAllocation": 404,
    "UnknownJob": 404,
    "NotFound": 404,
    "LeaseExpired": 403,
    "NotAuthorized": 403,
    "MethodNotAllowed": 405,
    "MiddlewareMismatch": 409,
    "OversizedJob": 409,
    "UnknownMiddleware": 409,
    "UnknownQueue": 409,
    "BadState": 409,
    "InternalInconsistency": 409,
    "DuplicateAllocation": 409,
    "DuplicateQueue": 409,
    "InsufficientNodes": 422,
    "InvalidLease": 422,
    "InvalidUsername": 422,
    "IoFailure": 503,
}

# approve reports a bad catalog key as a client error, submit as a conflict
_ADMIN_STATUS = {"UnknownMiddleware": 422}

Response = tuple[int, "dict | list | None"]


def error_code(exc: errors.BlockgateError) -> str:
    if isinstance(exc, errors.AuthRejected):
        return exc.reason.value
    return exc.code


def _error(code: str, detail: str, status: int | None = None) -> Response:
    return status or STATUS_BY_CODE[code], {"error": code, "detail": detail}


def _from_exc(exc: errors.BlockgateError, overrides: Mapping[str, int] = {}) -> Response:
    code = error_code(exc)
    body = {"error": code, "detail": exc.detail}
    if isinstance(exc, errors.AuthRejected):
        body["class"] = "AuthRejected"
    return overrides.get(code, STATUS_BY_CODE.get(code, 409)), body


class _BadRequest(Exception):
    pass


def _field(doc: Mapping, key: str, kind: type, positive: bool = False):
    if key not in doc:
        raise _BadRequest(f"missing field {key!r}")
    value = doc[key]
    # bool is an int subclass; reject it explicitly
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise _BadRequest(f"field {key!r} must be {kind.__name__}")
    if positive and value < 1:
        raise _BadRequest(f"field {key!r} must be >= 1")
    return value


def _json_object(body: bytes) -> dict:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _BadRequest(f"body is not UTF-8 JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise _BadRequest("body must be a JSON object")
    return doc


class JobJournal:
    """Append-only record of admitted and finished job ids.

    Only ids are kept, never job state, so after a restart the gateway can
    say which jobs were lost instead of pretending they never existed.
    """

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()

    def recover(self) -> list[str]:
        if not self.path.exists():
            return []
        admitted: dict[str, None] = {}
        for line in self.path.read_text(encoding="utf-8").splitlines():
            tag, _, job_id = line.partition(" ")
            if tag == "ADMIT":
                admitted[job_id] = None
            elif tag in ("DONE", "LOST"):
                admitted.pop(job_id, None)
        lost = list(admitted)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.writelines(f"LOST {j}\n" for j in lost)
        return lost

    def record(self, tag: str, job_id: str) -> None:
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(f"{tag} {job_id}\n")


class Gateway:
    def __init__(
        self,
        config: GatewayConfig,
        clock: Callable[[], int] | None = None,
        proxy_key: bytes | None = None,
    ):
        self.config = config
        self.clock = clock or (lambda: int(time.time()))
        self.store = TrustStore((ca_id, bytes.fromhex(key)) for ca_id, key in config.ca_trust)
        self.catalog = MiddlewareCatalog(config.middleware)
        self._proxy_key = proxy_key or secrets.token_bytes(32)
        self._admin_token = config.admin_token.encode("utf-8")
        self._admin_lock = threading.Lock()

        snapshot = Path(config.snapshot_path) if config.snapshot_path else None
        if snapshot is not None and snapshot.exists():
            self.registry = load_snapshot(snapshot, self.catalog)
            log.info("restored registry generation %d from %s", self.registry.generation, snapshot)
        else:
            self.registry = Registry.with_nodes(config.total_nodes, config.node_prefix, self.catalog)

        self.queues = QueueTable(self._proxy_key)
        for alloc in self.registry.allocations.values():
            self.queues.create_queue(alloc.queue_name, alloc.node_ids, alloc.owner_username)
        self.sim = GramSimulator(self.queues)
        self.router = WSPCRouter(self.store, self.registry, self.catalog, self._proxy_key, config.proxy_ttl_s)

        self.journal = JobJournal(snapshot.with_name(snapshot.name + ".jobs")) if snapshot else None
        self.lost_jobs: set[str] = set(self.journal.recover()) if self.journal else set()

    # ---- dispatch ---------------------------------------------------------

    def handle(self, method: str, path: str, headers: Mapping[str, str] | None = None, body: bytes = b"") -> Response:
        headers = {k.lower(): v for k, v in (headers or {}).items()}
        path = path.split("?", 1)[0].rstrip("/") or "/"
        try:
            if path == "/wspc/request":
                return self.handle_submit(body) if method == "POST" else self._not_allowed()
            if path == "/admin/approve":
                return self.handle_admin_approve(headers, body) if method == "POST" else self._not_allowed()
            if path.startswith("/admin/allocation/"):
                user = path[len("/admin/allocation/"):]
                return self.handle_admin_release(headers, user) if method == "DELETE" else self._not_allowed()
            if path.startswith("/jobs/"):
                return self.handle_job_status(path[len("/jobs/"):]) if method == "GET" else self._not_allowed()
            if path == "/blocks":
                return self.handle_blocks() if method == "GET" else self._not_allowed()
            return _error("NotFound", f"no route for {path}")
        except _BadRequest as exc:
            return _error("MalformedRequest", str(exc))

    @staticmethod
    def _not_allowed() -> Response:
        return _error("MethodNotAllowed", "method not allowed on this path")

    # ---- user path ----------------------------------------------------------

    def handle_submit(self, body: bytes) -> Response:
        doc = _json_object(body)
        username = _field(doc, "username", str)
        cert_text = _field(doc, "userCA", str)
        middleware = _field(doc, "middleware", str)
        job = _field(doc, "job", dict)
        command = _field(job, "command", str)
        nodes = _field(job, "nodes", int, positive=True)
        walltime = _field(job, "walltime_s", int, positive=True)

        try:
            cert = Certificate.from_wire(cert_text)
        except errors.MalformedCertificate as exc:
            return _from_exc(exc)
        req = JobRequest(username, cert, middleware, command, nodes, walltime)
        now = self.clock()
        try:
            decision = self.router.route(req, now)
            self.sim.submit(decision, decision.job, now)
        except errors.BlockgateError as exc:
            log.info("rejected request from %r: %s", username, exc.detail)
            return _from_exc(exc)
        if self.journal:
            self.journal.record("ADMIT", decision.job_id)
        return 202, {
            "job_id": decision.job_id,
            "queue": decision.queue_name,
            "block_id": decision.block_id,
            "middleware_path": decision.middleware_path,
        }

    # ---- admin path -------------------------------------------------------

    def _check_admin(self, headers: Mapping[str, str]) -> bool:
        token = headers.get("x-admin-token", "").encode("utf-8")
        return bool(self._admin_token) and hmac.compare_digest(token, self._admin_token)

    def _persist(self) -> None:
        if self.config.snapshot_path:
            save_snapshot(self.registry, self.config.snapshot_path)

    def _apply_directives(self) -> None:
        for d in self.registry.drain_directives():
            if d.action == "create":
                self.queues.create_queue(d.queue_name, d.node_ids, d.queue_name)
            else:
                self._journal_events(self.sim.abort_block(d.queue_name))

    def handle_admin_approve(self, headers: Mapping[str, str], body: bytes) -> Response:
        if not self._check_admin(headers):
            return _error("BadAdminToken", "missing or wrong X-Admin-Token")
        doc = _json_object(body)
        username = _field(doc, "username", str)
        nodes = _field(doc, "nodes", int, positive=True)
        middleware = _field(doc, "middleware", str)
        lease_start = _field(doc, "lease_start", int)
        lease_end = _field(doc, "lease_end", int)
        with self._admin_lock, self.registry.writer:
            if username in self.queues.queues:
                return _error("DuplicateQueue", f"queue {username!r} already exists")
            try:
                alloc = self.registry.approve_user(username, nodes, middleware, lease_start, lease_end)
            except errors.BlockgateError as exc:
                return _from_exc(exc, _ADMIN_STATUS)
            self._apply_directives()
            try:
                self._persist()
            except errors.IoFailure as exc:
                return _from_exc(exc)
        return 201, alloc.to_dict()

    def handle_admin_release(self, headers: Mapping[str, str], username: str) -> Response:
        if not self._check_admin(headers):
            return _error("BadAdminToken", "missing or wrong X-Admin-Token")
        with self._admin_lock, self.registry.writer:
            try:
                self.registry.release(username)
            except errors.BlockgateError as exc:
                return _from_exc(exc)
            self._apply_directives()
            try:
                self._persist()
            except errors.IoFailure as exc:
                return _from_exc(exc)
        return 204, None

    # ---- reads ------------------------------------------------------------

    def handle_job_status(self, job_id: str) -> Response:
        try:
            return 200, self.sim.job_status(job_id).to_dict()
        except errors.UnknownJob as exc:
            if job_id in self.lost_jobs:
                return 200, {"job_id": job_id, "state": JobState.REJECTED.value, "reason": "RestartLost"}
            return _from_exc(exc)

    def handle_blocks(self) -> Response:
        allocations = self.registry.allocations
        return 200, [allocations[u].to_dict() for u in sorted(allocations)]

    # ---- simulator driving ------------------------------------------------

    def _journal_events(self, events: list[Event]) -> None:
        if self.journal:
            for e in events:
                if e.kind in (JOB_COMPLETED, JOB_REJECTED):
                    self.journal.record("DONE", e.job_id)

    def tick(self) -> list[Event]:
        events = self.sim.step()
        self._journal_events(events)
        return events

    def run_until_idle(self, max_steps: int) -> int:
        steps = 0
        while self.sim.has_work():
            if steps >= max_steps:
                raise errors.Timeout(max_steps)
            self.tick()
            steps += 1
        return steps


def derive_key(label: str, seed: int) -> bytes:
    return hashlib.sha256(f"blockgate:{label}:{seed}".encode()).digest()

