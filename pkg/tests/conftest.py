from __future__ import annotations

import pytest

from blockgate.certkit import TrustStore, ca_issue, ca_keygen
from blockgate.gateway import Gateway, GatewayConfig
from blockgate.pqueue import QueueTable
from blockgate.registry import Registry
from blockgate.router import MiddlewareCatalog

PROXY_KEY = b"k" * 32
ADMIN = "s3cret"
CATALOG = {"gt4": "/opt/mw/gt4", "mpich-g2": "/opt/mw/mpich-g2", "unicore": "/opt/mw/unicore"}


@pytest.fixture(scope="session")
def grid1():
    return ca_keygen("grid1", 42)


@pytest.fixture(scope="session")
def grid2():
    return ca_keygen("grid2", 7)


@pytest.fixture(scope="session")
def grid3():
    return ca_keygen("grid3", 99)


@pytest.fixture
def store(grid1, grid2):
    return TrustStore.of(grid1, grid2)


@pytest.fixture
def alice_cert(grid1):
    return ca_issue(grid1, "alice", 0, 86_400)


@pytest.fixture
def bob_cert(grid2):
    return ca_issue(grid2, "bob", 0, 86_400)


@pytest.fixture
def catalog():
    return MiddlewareCatalog(CATALOG)


@pytest.fixture
def reg(catalog):
    return Registry.with_nodes(8, middlewares=catalog)


@pytest.fixture
def queues():
    return QueueTable(PROXY_KEY)


@pytest.fixture
def gw_config(grid1, grid2):
    return GatewayConfig(
        listen_address="127.0.0.1:0",
        total_nodes=8,
        ca_trust=[("grid1", grid1.verifying_key.hex()), ("grid2", grid2.verifying_key.hex())],
        middleware=dict(CATALOG),
        proxy_ttl_s=600,
        admin_token=ADMIN,
    ).validate()


class Clock:
    def __init__(self, t: int = 1000):
        self.t = t

    def __call__(self) -> int:
        return self.t


@pytest.fixture
def clock():
    return Clock()


@pytest.fixture
def gateway(gw_config, clock):
    return Gateway(gw_config, clock=clock, proxy_key=PROXY_KEY)
