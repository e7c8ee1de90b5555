"""blockgate: certificate-routed job gateway for a multi-block public cluster.

Requests from collaborating grids carry a signed certificate. The gateway
verifies it, takes the username out of it, and forwards the job to the queue
of the block that user owns. A simulated execution engine then runs the job
on that block's nodes only.
"""

from blockgate.certkit import (
    AuthOutcome,
    CAIdentity,
    Certificate,
    ProxyCredential,
    TrustStore,
    ca_issue,
    ca_keygen,
    extract_username,
    issue_proxy,
    verify_certificate,
    verify_proxy,
)
from blockgate.errors import BlockgateError
from blockgate.gram_sim import GramSimulator, SimReport
from blockgate.pqueue import JobRecord, JobState, Queue, QueueTable
from blockgate.registry import (
    BlockAllocation,
    Registry,
    first_fit,
    load_snapshot,
    save_snapshot,
)
from blockgate.router import (
    JobRequest,
    MiddlewareCatalog,
    RoutingDecision,
    WSPCRouter,
    resolve_middleware,
    route,
)

__version__ = "0.1.0"

__all__ = [
    "AuthOutcome",
    "BlockAllocation",
    "BlockgateError",
    "CAIdentity",
    "Certificate",
    "GramSimulator",
    "JobRecord",
    "JobRequest",
    "JobState",
    "MiddlewareCatalog",
    "ProxyCredential",
    "Queue",
    "QueueTable",
    "Registry",
    "RoutingDecision",
    "SimReport",
    "TrustStore",
    "WSPCRouter",
    "ca_issue",
    "ca_keygen",
    "extract_username",
    "first_fit",
    "issue_proxy",
    "load_snapshot",
    "resolve_middleware",
    "route",
    "save_snapshot",
    "verify_certificate",
    "verify_proxy",
]
