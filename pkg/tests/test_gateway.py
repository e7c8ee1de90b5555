from __future__ import annotations

import json
import random

import pytest

from blockgate import errors
from blockgate.certkit import ca_issue
from blockgate.gateway import STATUS_BY_CODE, Gateway, parse_config
from blockgate.gateway.http import GatewayServer, call
from conftest import ADMIN, PROXY_KEY

ADMIN_HDR = {"X-Admin-Token": ADMIN}


def post(gw, path, doc, headers=None):
    return gw.handle("POST", path, headers or {}, json.dumps(doc).encode())


def approve(gw, user="alice", nodes=4, mw="gt4", start=0, end=86_400, headers=ADMIN_HDR):
    return post(gw, "/admin/approve",
                {"username": user, "nodes": nodes, "middleware": mw, "lease_start": start, "lease_end": end},
                headers)


def submission(cert, user=None, mw="gt4", nodes=1, wall=10):
    return {
        "username": user or cert.subject_username,
        "userCA": cert.to_wire(),
        "middleware": mw,
        "job": {"command": "mpirun ./a.out", "nodes": nodes, "walltime_s": wall},
    }


def test_approve_creates_block_and_queue(gateway):
    status, doc = approve(gateway)
    assert status == 201
    assert doc["queue_name"] == "alice" and len(doc["node_ids"]) == 4
    assert "alice" in gateway.queues.queues
    assert approve(gateway)[0] == 409


def test_approve_requires_admin_token(gateway):
    for headers in ({}, {"X-Admin-Token": "wrong"}):
        status, doc = approve(gateway, headers=headers)
        assert status == 401 and doc["error"] == "BadAdminToken"
    assert gateway.registry.generation == 0


def test_failed_approve_creates_no_queue(gateway):
    status, doc = approve(gateway, nodes=9)
    assert (status, doc["error"]) == (422, "InsufficientNodes")
    assert approve(gateway, mw="condor")[0] == 422
    assert approve(gateway, start=5, end=5)[0] == 422
    assert gateway.queues.queues == {} and gateway.registry.generation == 0


def test_submit_routes_to_owner_queue(gateway, alice_cert):
    approve(gateway)
    status, doc = post(gateway, "/wspc/request", submission(alice_cert))
    assert status == 202
    assert doc["queue"] == "alice"
    assert doc["middleware_path"] == "/opt/mw/gt4"
    assert set(doc) == {"job_id", "queue", "block_id", "middleware_path"}
    status, job = gateway.handle("GET", f"/jobs/{doc['job_id']}")
    assert status == 200 and job["state"] == "Queued"


def test_submit_missing_userca_is_400(gateway, alice_cert):
    body = submission(alice_cert)
    del body["userCA"]
    assert post(gateway, "/wspc/request", body)[0] == 400


@pytest.mark.parametrize(
    "body",
    [b"", b"[]", b"{bad", b'{"username": 1}', "\xff".encode("latin-1")],
)
def test_submit_malformed_bodies(gateway, body):
    status, doc = gateway.handle("POST", "/wspc/request", {}, body)
    assert (status, doc["error"]) == (400, "MalformedRequest")


def test_submit_bad_job_fields(gateway, alice_cert):
    for job in ({"command": "x", "nodes": 0, "walltime_s": 1}, {"command": "x", "nodes": True, "walltime_s": 1},
                {"command": "x", "nodes": 1}, {"nodes": 1, "walltime_s": 1}):
        body = submission(alice_cert)
        body["job"] = job
        assert post(gateway, "/wspc/request", body)[0] == 400


def test_submit_error_mapping(gateway, grid1, grid3, alice_cert, bob_cert, clock):
    approve(gateway)
    approve(gateway, "bob", 2, "unicore", 0, 500)
    carol = ca_issue(grid1, "carol", 0, 86_400)
    cases = [
        (submission(bob_cert, user="alice"), 401, "UsernameMismatch"),
        (submission(ca_issue(grid3, "alice", 0, 86_400)), 401, "UnknownCA"),
        (submission(ca_issue(grid1, "alice", 0, 999)), 401, "Expired"),
        (submission(ca_issue(grid1, "alice", 5000, 6000)), 401, "NotYetValid"),
        (submission(carol), 404, "NoAllocation"),
        (submission(bob_cert, mw="unicore"), 403, "LeaseExpired"),
        (submission(alice_cert, mw="unicore"), 409, "MiddlewareMismatch"),
        (submission(alice_cert, nodes=5), 409, "OversizedJob"),
        ({**submission(alice_cert), "userCA": "@@@"}, 401, "MalformedCertificate"),
    ]
    for body, status, code in cases:
        got_status, doc = post(gateway, "/wspc/request", body)
        assert (got_status, doc["error"]) == (status, code), body["username"]
        assert STATUS_BY_CODE[code] == status


def test_rejections_change_nothing(gateway, grid3, alice_cert):
    approve(gateway)
    post(gateway, "/wspc/request", submission(alice_cert))
    gen, lengths = gateway.registry.generation, gateway.queues.lengths()
    for body in (submission(ca_issue(grid3, "alice", 0, 86_400)), submission(alice_cert, nodes=7)):
        assert post(gateway, "/wspc/request", body)[0] >= 400
    assert (gateway.registry.generation, gateway.queues.lengths()) == (gen, lengths)


def test_status_and_listings(gateway, alice_cert):
    approve(gateway)
    approve(gateway, "bob", 2, "unicore")
    _, doc = post(gateway, "/wspc/request", submission(alice_cert, wall=3))
    gateway.run_until_idle(100)
    status, job = gateway.handle("GET", f"/jobs/{doc['job_id']}")
    assert status == 200 and job["state"] == "Completed" and job["end_time"] == 4
    assert gateway.handle("GET", "/jobs/nope-1-1")[0] == 404
    status, blocks = gateway.handle("GET", "/blocks")
    assert status == 200 and [b["owner_username"] for b in blocks] == ["alice", "bob"]
    a, b = (set(x["node_ids"]) for x in blocks)
    assert not a & b
    assert "token" not in json.dumps(blocks)


def test_release_endpoint(gateway, alice_cert):
    approve(gateway)
    _, doc = post(gateway, "/wspc/request", submission(alice_cert, wall=50))
    gateway.tick()
    assert gateway.handle("DELETE", "/admin/allocation/alice", {})[0] == 401
    assert gateway.handle("DELETE", "/admin/allocation/alice", ADMIN_HDR) == (204, None)
    assert gateway.handle("DELETE", "/admin/allocation/alice", ADMIN_HDR)[0] == 404
    assert gateway.handle("GET", f"/jobs/{doc['job_id']}")[1]["state"] == "Completed"
    assert gateway.handle("GET", "/blocks") == (200, [])
    assert post(gateway, "/wspc/request", submission(alice_cert))[0] == 404
    assert approve(gateway, nodes=8)[0] == 201


def test_unknown_routes(gateway):
    assert gateway.handle("GET", "/nowhere")[0] == 404
    assert gateway.handle("GET", "/wspc/request")[0] == 405


def test_wire_errors_never_500(gateway, alice_cert, grid1):
    """Fuzzed bodies only ever get mapped statuses."""
    approve(gateway)
    rng = random.Random(8)
    good = json.dumps(submission(alice_cert)).encode()
    allowed = set(STATUS_BY_CODE.values()) | {202}
    for _ in range(400):
        blob = bytearray(good)
        for _ in range(rng.randint(1, 4)):
            blob[rng.randrange(len(blob))] = rng.randrange(256)
        status, doc = gateway.handle("POST", "/wspc/request", {}, bytes(blob))
        assert status in allowed
        if status != 202:
            assert STATUS_BY_CODE[doc["error"]] == status


def test_crash_restart(tmp_path, gw_config, alice_cert, clock):
    gw_config.snapshot_path = str(tmp_path / "reg.snap")
    gw = Gateway(gw_config, clock=clock, proxy_key=PROXY_KEY)
    approve(gw)
    approve(gw, "bob", 2, "unicore")
    _, done = post(gw, "/wspc/request", submission(alice_cert, nodes=4, wall=2))
    _, queued = post(gw, "/wspc/request", submission(alice_cert, nodes=4, wall=2))
    gw.tick()
    gw.tick()
    gw.tick()  # first job finished, second started
    _, waiting = post(gw, "/wspc/request", submission(alice_cert, nodes=4, wall=2))
    blocks_before = gw.handle("GET", "/blocks")

    restarted = Gateway(gw_config, clock=clock, proxy_key=b"new key")
    assert restarted.handle("GET", "/blocks") == blocks_before
    assert restarted.registry.generation == 2
    for job_id in (queued["job_id"], waiting["job_id"]):
        assert restarted.handle("GET", f"/jobs/{job_id}") == (
            200, {"job_id": job_id, "state": "Rejected", "reason": "RestartLost"})
    assert restarted.handle("GET", f"/jobs/{done['job_id']}")[0] == 404
    # routing still works after restart
    assert post(restarted, "/wspc/request", submission(alice_cert))[0] == 202


def test_http_round_trip(gateway, alice_cert):
    with GatewayServer(gateway, "127.0.0.1", 0) as server:
        status, doc = call(server.url, "POST", "/admin/approve",
                           {"username": "alice", "nodes": 2, "middleware": "gt4", "lease_start": 0, "lease_end": 10**6},
                           ADMIN_HDR)
        assert status == 201
        status, doc = call(server.url, "POST", "/wspc/request", submission(alice_cert))
        assert status == 202 and doc["queue"] == "alice"
        assert call(server.url, "GET", f"/jobs/{doc['job_id']}")[1]["state"] == "Queued"
        assert call(server.url, "POST", "/wspc/request", raw_body=b"{")[0] == 400
        assert call(server.url, "DELETE", "/admin/allocation/alice", headers=ADMIN_HDR) == (204, None)


# ---- config ----------------------------------------------------------------

CONFIG_TEXT = """
# gateway
listen_address = 0.0.0.0:9000
total_nodes = 16
node_prefix = node
ca_trust = grid1:{k1}
ca_trust = grid2:{k2}
middleware = gt4:/opt/mw/gt4, unicore:/opt/mw/unicore
proxy_ttl_s = 120
snapshot_path = /var/lib/blockgate/reg.snap
admin_token = hunter2
"""


def test_parse_config(grid1, grid2):
    cfg = parse_config(CONFIG_TEXT.format(k1=grid1.verifying_key.hex(), k2=grid2.verifying_key.hex()))
    assert (cfg.host, cfg.port, cfg.total_nodes, cfg.node_prefix) == ("0.0.0.0", 9000, 16, "node")
    assert [c for c, _ in cfg.ca_trust] == ["grid1", "grid2"]
    assert cfg.middleware == {"gt4": "/opt/mw/gt4", "unicore": "/opt/mw/unicore"}
    assert cfg.proxy_ttl_s == 120 and cfg.admin_token == "hunter2"


@pytest.mark.parametrize(
    "extra",
    ["colour = blue", "total_nodes = 0", "proxy_ttl_s = 0", "total_nodes = 3", "ca_trust = grid1:abcd"],
)
def test_config_errors(grid1, grid2, extra):
    text = CONFIG_TEXT.format(k1=grid1.verifying_key.hex(), k2=grid2.verifying_key.hex()) + extra + "\n"
    with pytest.raises(errors.ConfigError):
        parse_config(text)


def test_config_requires_middleware():
    with pytest.raises(errors.ConfigError):
        parse_config("admin_token = x\n")


def test_concurrent_submissions_get_unique_ids(gateway, alice_cert, bob_cert):
    from concurrent.futures import ThreadPoolExecutor

    approve(gateway)
    approve(gateway, "bob", 2, "unicore")
    bodies = [submission(alice_cert) if i % 2 else submission(bob_cert, mw="unicore") for i in range(200)]
    with GatewayServer(gateway, "127.0.0.1", 0, tick_interval=0.001) as server:
        with ThreadPoolExecutor(16) as pool:
            results = list(pool.map(lambda b: call(server.url, "POST", "/wspc/request", b), bodies))
    assert all(status == 202 for status, _ in results)
    ids = [doc["job_id"] for _, doc in results]
    assert len(set(ids)) == 200
    assert all(doc["queue"] == doc["job_id"].split("-")[0] for _, doc in results)
    gateway.run_until_idle(100_000)
    assert all(gateway.sim.job_status(i).state.value == "Completed" for i in ids)
