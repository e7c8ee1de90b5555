"""Two grids, one cluster: the federation scenario end to end.

grid1 vouches for alice, who owns a 4-node block running gt4. grid2 vouches
for bob, who owns a 2-node block running unicore. A seeded mix of honest and
hostile requests goes through the real HTTP path, the simulator drains, and
the event log is scanned to make sure no job ever left its owner's block.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field

from blockgate.certkit import Certificate, ca_issue, ca_keygen
from blockgate.gateway.config import GatewayConfig
from blockgate.gateway.http import GatewayServer, call
from blockgate.gateway.service import Gateway, derive_key
from blockgate.gram_sim import JOB_COMPLETED, JOB_STARTED, Event

ADMIN_TOKEN = "demo-admin-token"
AUTH_EPOCH = 1_000  # auth clock = AUTH_EPOCH + simulator clock
LEASE = (0, 86_400)
CATALOG = {"gt4": "/opt/middleware/gt4", "unicore": "/opt/middleware/unicore"}
OWNERS = {"alice": ("grid1", 4, "gt4"), "bob": ("grid2", 2, "unicore")}


@dataclass
class Submission:
    label: str
    body: dict | None
    expect_status: int
    expect_error: str | None
    grid: str | None  # CA that signed the certificate, if any
    raw: bytes | None = None


@dataclass
class DemoResult:
    exit_code: int
    report: str
    event_log: str
    failures: list[str] = field(default_factory=list)
    completed_per_block: dict[str, int] = field(default_factory=dict)
    cross_block: int = 0
    double_booked: int = 0
    rejections: dict[str, int] = field(default_factory=dict)
    outcomes: list[tuple[str, int, str | None]] = field(default_factory=list)


def _tamper(cert: Certificate) -> Certificate:
    sig = bytearray(cert.signature)
    sig[0] ^= 0x01
    return dataclasses.replace(cert, signature=bytes(sig))


def build_submissions(seed: int, distrusted: str | None = None) -> tuple[list[Submission], dict[str, object]]:
    rng = random.Random(seed)
    cas = {g: ca_keygen(g, seed * 1000 + i) for i, g in enumerate(("grid1", "grid2", "grid3"))}
    certs = {
        "alice": ca_issue(cas["grid1"], "alice", *LEASE),
        "bob": ca_issue(cas["grid2"], "bob", *LEASE),
        "carol": ca_issue(cas["grid1"], "carol", *LEASE),
        "mallory": ca_issue(cas["grid3"], "mallory", *LEASE),
        "alice_expired": ca_issue(cas["grid1"], "alice", 0, 500),
        "alice_future": ca_issue(cas["grid1"], "alice", 50_000, 60_000),
    }

    def body(user: str, cert: Certificate, mw: str, nodes: int, wall: int, cmd: str = "mpirun ./sim") -> dict:
        return {
            "username": user,
            "userCA": cert.to_wire(),
            "middleware": mw,
            "job": {"command": cmd, "nodes": nodes, "walltime_s": wall},
        }

    def expect(grid: str | None, status: int, error: str | None) -> tuple[int, str | None]:
        # stage-one auth runs before anything else can fail
        if grid is not None and grid == distrusted:
            return 401, "UnknownCA"
        return status, error

    subs: list[Submission] = []

    def add(label, b, grid, status, error):
        s, e = expect(grid, status, error)
        subs.append(Submission(label, b, s, e, grid))

    for i in range(6):
        add(f"alice-valid-{i}", body("alice", certs["alice"], "gt4", rng.randint(1, 4), rng.randint(3, 25)),
            "grid1", 202, None)
    for i in range(4):
        add(f"bob-valid-{i}", body("bob", certs["bob"], "unicore", rng.randint(1, 2), rng.randint(3, 25)),
            "grid2", 202, None)
    add("bob-claims-alice", body("alice", certs["bob"], "gt4", 1, 5), "grid2", 401, "UsernameMismatch")
    add("alice-tampered", body("alice", _tamper(certs["alice"]), "gt4", 1, 5), "grid1", 401, "BadSignature")
    add("alice-expired", body("alice", certs["alice_expired"], "gt4", 1, 5), "grid1", 401, "Expired")
    add("alice-not-yet-valid", body("alice", certs["alice_future"], "gt4", 1, 5), "grid1", 401, "NotYetValid")
    add("carol-no-block", body("carol", certs["carol"], "gt4", 1, 5), "grid1", 404, "NoAllocation")
    add("mallory-untrusted", body("mallory", certs["mallory"], "gt4", 1, 5), "grid3", 401, "UnknownCA")
    add("alice-wrong-middleware", body("alice", certs["alice"], "unicore", 1, 5), "grid1", 409, "MiddlewareMismatch")
    add("alice-oversized", body("alice", certs["alice"], "gt4", 5, 5), "grid1", 409, "OversizedJob")
    add("bob-oversized", body("bob", certs["bob"], "unicore", 3, 5), "grid2", 409, "OversizedJob")
    add("bob-wrong-middleware", body("bob", certs["bob"], "gt4", 1, 5), "grid2", 409, "MiddlewareMismatch")
    missing = body("alice", certs["alice"], "gt4", 1, 5)
    del missing["userCA"]
    subs.append(Submission("alice-missing-userCA", missing, 400, "MalformedRequest", None))
    subs.append(Submission("garbage-body", None, 400, "MalformedRequest", None, raw=b"{not json"))

    rng.shuffle(subs)
    return subs, {"cas": cas, "certs": certs}


def scan_event_log(lines: list[str], blocks: dict[str, set[str]]) -> tuple[int, int]:
    """Count JobStarted events outside the owner's block, and double-booked node-seconds."""
    events = [Event.parse(line) for line in lines if line]
    cross = sum(
        1 for e in events if e.kind == JOB_STARTED and not set(e.nodes) <= blocks.get(e.queue, set())
    )
    intervals: dict[str, tuple[int, tuple[str, ...]]] = {}
    spans: list[tuple[int, int, tuple[str, ...]]] = []
    for e in events:
        if e.kind == JOB_STARTED:
            intervals[e.job_id] = (e.time, e.nodes)
        elif e.kind == JOB_COMPLETED and e.job_id in intervals:
            start, nodes = intervals.pop(e.job_id)
            spans.append((start, e.time, nodes))
    horizon = max((e.time for e in events), default=0) + 1
    spans.extend((start, horizon, nodes) for start, nodes in intervals.values())
    double = 0
    for t in range(horizon + 1):
        seen: Counter[str] = Counter()
        for start, end, nodes in spans:
            if start <= t < end:
                seen.update(nodes)
        double += sum(1 for c in seen.values() if c > 1)
    return cross, double


def run_demo(
    seed: int = 1,
    distrust: str | None = None,
    max_steps: int = 10_000,
    use_http: bool = True,
) -> DemoResult:
    subs, material = build_submissions(seed, distrust)
    cas = material["cas"]
    trust = [(g, cas[g].verifying_key.hex()) for g in ("grid1", "grid2") if g != distrust]
    config = GatewayConfig(
        listen_address="127.0.0.1:0",
        total_nodes=8,
        ca_trust=trust,
        middleware=dict(CATALOG),
        proxy_ttl_s=3600,
        admin_token=ADMIN_TOKEN,
    ).validate()
    gateway = Gateway(config, proxy_key=derive_key("proxy", seed))
    gateway.clock = lambda: AUTH_EPOCH + gateway.sim.clock

    server = GatewayServer(gateway, "127.0.0.1", 0).start() if use_http else None

    def send(method: str, path: str, payload=None, headers=None, raw=None):
        if server is not None:
            return call(server.url, method, path, payload, headers, raw_body=raw)
        data = raw if raw is not None else (b"" if payload is None else json.dumps(payload).encode())
        return gateway.handle(method, path, headers or {}, data)

    failures: list[str] = []
    outcomes: list[tuple[str, int, str | None]] = []
    rejections: Counter[str] = Counter()
    accepted: dict[str, str] = {}
    rng = random.Random(seed ^ 0x5EED)
    try:
        for user, (_, nodes, mw) in OWNERS.items():
            status, doc = send(
                "POST", "/admin/approve",
                {"username": user, "nodes": nodes, "middleware": mw, "lease_start": LEASE[0], "lease_end": LEASE[1]},
                {"X-Admin-Token": ADMIN_TOKEN},
            )
            if status != 201 or doc.get("queue_name") != user:
                failures.append(f"approve {user}: HTTP {status} {doc}")

        for sub in subs:
            status, doc = send("POST", "/wspc/request", sub.body, raw=sub.raw)
            error = doc.get("error") if isinstance(doc, dict) else None
            outcomes.append((sub.label, status, error))
            if status == 202:
                accepted[doc["job_id"]] = sub.body["username"]
                if doc.get("queue") != sub.body["username"]:
                    failures.append(f"{sub.label}: routed to queue {doc.get('queue')!r}")
            else:
                rejections[error] += 1
            if (status, error) != (sub.expect_status, sub.expect_error):
                failures.append(
                    f"{sub.label}: expected {sub.expect_status} {sub.expect_error}, got {status} {error}"
                )
            for _ in range(rng.randint(0, 2)):
                gateway.tick()

        gateway.run_until_idle(max_steps)

        for job_id in accepted:
            status, doc = send("GET", f"/jobs/{job_id}")
            if status != 200 or doc.get("state") != "Completed":
                failures.append(f"job {job_id} ended as {doc}")
        status, blocks_doc = send("GET", "/blocks")
    finally:
        if server is not None:
            server.stop()

    blocks = {b["queue_name"]: set(b["node_ids"]) for b in blocks_doc}
    event_log = gateway.sim.export_log()
    cross, double = scan_event_log(event_log.splitlines(), blocks)
    if cross:
        failures.append(f"{cross} job(s) started outside their owner's block")
    if double:
        failures.append(f"{double} double-booked node-second(s)")
    if distrust is not None:
        distrusted_users = {u for u, (g, _, _) in OWNERS.items() if g == distrust}
        leaked = [j for j, u in accepted.items() if u in distrusted_users]
        if leaked:
            failures.append(f"jobs from distrusted grid {distrust} were accepted: {leaked}")

    completed: Counter[str] = Counter()
    for e in map(Event.parse, event_log.splitlines()):
        if e.kind == JOB_COMPLETED:
            completed[e.queue] += 1
    per_block = {q: completed.get(q, 0) for q in sorted(blocks)}

    lines = [f"blockgate demo seed={seed}" + (f" distrust={distrust}" if distrust else "")]
    lines.append(f"trusted CAs: {', '.join(g for g, _ in trust) or '(none)'}")
    for label, status, error in outcomes:
        lines.append(f"  {label:<24} {status} {error or 'accepted'}")
    for q, n in per_block.items():
        lines.append(f"completed on block {q}: {n}")
    lines.append(f"cross-block executions: {cross}")
    lines.append(f"double-booked node-seconds: {double}")
    lines.append("rejections: " + (", ".join(f"{k}={v}" for k, v in sorted(rejections.items())) or "none"))
    lines.append(f"simulated seconds: {gateway.sim.clock}")
    lines.append(f"event log sha256: {hashlib.sha256(event_log.encode()).hexdigest()}")
    for f in failures:
        lines.append(f"FAIL: {f}")
    lines.append("RESULT: " + ("PASS" if not failures else "FAIL"))
    return DemoResult(
        exit_code=0 if not failures else 1,
        report="\n".join(lines),
        event_log=event_log,
        failures=failures,
        completed_per_block=per_block,
        cross_block=cross,
        double_booked=double,
        rejections=dict(rejections),
        outcomes=outcomes,
    )
