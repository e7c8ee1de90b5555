"""Node inventory, block allocations and the username -> queue table.

Allocation here only exists to name queues. Each approved user gets one
block of nodes and one queue whose name is the username; nobody schedules
across users.
"""

from __future__ import annotations

import os
import tempfile
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from blockgate import errors
from blockgate.certkit import valid_username

SNAPSHOT_MAGIC = "BLOCKGATE-REGISTRY"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Node:
    node_id: str
    owner: str | None = None  # None means Free

    @property
    def free(self) -> bool:
        return self.owner is None


@dataclass(frozen=True)
class BlockAllocation:
    owner_username: str
    block_id: str
    node_ids: tuple[str, ...]
    middleware: str
    lease_start: int
    lease_end: int

    @property
    def queue_name(self) -> str:
        return self.owner_username

    def active_at(self, now: int) -> bool:
        return self.lease_start <= now < self.lease_end

    def to_dict(self) -> dict:
        return {
            "owner_username": self.owner_username,
            "queue_name": self.queue_name,
            "block_id": self.block_id,
            "node_ids": list(self.node_ids),
            "middleware": self.middleware,
            "lease_start": self.lease_start,
            "lease_end": self.lease_end,
        }


class QueueLookup(NamedTuple):
    queue_name: str
    block_id: str
    middleware: str


@dataclass(frozen=True)
class QueueDirective:
    """Emitted by a registry mutation for the queue layer to apply."""

    action: str  # "create" | "delete"
    queue_name: str
    node_ids: tuple[str, ...] = ()


def first_fit(free_node_ids: Iterable[str], k: int) -> tuple[str, ...]:
    """First ``k`` ids in ascending lexicographic order."""
    ordered = sorted(set(free_node_ids))
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > len(ordered):
        raise errors.InsufficientNodes(f"requested {k} nodes, {len(ordered)} free")
    return tuple(ordered[:k])


def node_names(total: int, prefix: str = "n") -> list[str]:
    width = max(2, len(str(total - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(total)]


class Registry:
    """Cluster state consulted by the router.

    Mutations go through a single writer lock. Reads take a reference to the
    current immutable tables, so they never block and always see a
    consistent view; ``generation`` tells a reader whether its view is stale.
    """

    def __init__(self, node_ids: Iterable[str], middlewares: Iterable[str] | None = None):
        ids = list(node_ids)
        if not ids:
            raise ValueError("registry needs at least one node")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        self._nodes: dict[str, Node] = {n: Node(n) for n in sorted(ids)}
        self._allocations: dict[str, BlockAllocation] = {}
        self.generation = 0
        # None: accept any middleware name (catalog checked elsewhere)
        self.middlewares = None if middlewares is None else frozenset(middlewares)
        self._directives: list[QueueDirective] = []
        self._write_lock = threading.RLock()

    @classmethod
    def with_nodes(cls, total: int, prefix: str = "n", middlewares: Iterable[str] | None = None) -> Registry:
        if total < 1:
            raise ValueError("total_nodes must be >= 1")
        return cls(node_names(total, prefix), middlewares)

    @property
    def nodes(self) -> dict[str, Node]:
        return dict(self._nodes)

    @property
    def allocations(self) -> dict[str, BlockAllocation]:
        return dict(self._allocations)

    @property
    def total_nodes(self) -> int:
        return len(self._nodes)

    def free_node_ids(self) -> list[str]:
        return [n.node_id for n in self._nodes.values() if n.free]

    @property
    def writer(self) -> threading.RLock:
        """Hold this to group several mutations into one atomic step."""
        return self._write_lock

    def drain_directives(self) -> list[QueueDirective]:
        with self._write_lock:
            out, self._directives = self._directives, []
        return out

    def approve_user(
        self,
        username: str,
        node_count: int,
        middleware: str,
        lease_start: int,
        lease_end: int,
    ) -> BlockAllocation:
        if not valid_username(username):
            raise errors.InvalidUsername(f"username {username!r} is not valid")
        if not isinstance(node_count, int) or node_count < 1:
            raise errors.InsufficientNodes(f"node_count must be a positive integer, got {node_count!r}")
        if not lease_start < lease_end:
            raise errors.InvalidLease(f"empty lease [{lease_start}, {lease_end})")
        if self.middlewares is not None and middleware not in self.middlewares:
            raise errors.UnknownMiddleware(f"middleware {middleware!r} is not in the catalog")
        with self._write_lock:
            if username in self._allocations:
                raise errors.DuplicateAllocation(f"{username!r} already holds a block")
            chosen = first_fit(self.free_node_ids(), node_count)
            generation = self.generation + 1
            alloc = BlockAllocation(
                owner_username=username,
                block_id=f"blk{generation:04d}",
                node_ids=chosen,
                middleware=middleware,
                lease_start=int(lease_start),
                lease_end=int(lease_end),
            )
            nodes = dict(self._nodes)
            for n in chosen:
                nodes[n] = Node(n, username)
            allocations = dict(self._allocations)
            allocations[username] = alloc
            self._nodes, self._allocations = nodes, allocations
            self.generation = generation
            self._directives.append(QueueDirective("create", username, chosen))
        return alloc

    def lookup_allocation(self, username: str, now: int) -> BlockAllocation:
        """The active allocation for ``username``, read from one consistent view."""
        alloc = self._allocations.get(username)
        if alloc is None:
            raise errors.NoAllocation(f"no block allocated to {username!r}")
        if not alloc.active_at(now):
            raise errors.LeaseExpired(
                f"lease of {username!r} is [{alloc.lease_start}, {alloc.lease_end}), now={now}"
            )
        return alloc

    def lookup_queue(self, username: str, now: int) -> QueueLookup:
        alloc = self.lookup_allocation(username, now)
        return QueueLookup(alloc.queue_name, alloc.block_id, alloc.middleware)

    def allocation_of(self, username: str) -> BlockAllocation:
        try:
            return self._allocations[username]
        except KeyError:
            raise errors.NoAllocation(f"no block allocated to {username!r}") from None

    def release(self, username: str) -> BlockAllocation:
        with self._write_lock:
            alloc = self._allocations.get(username)
            if alloc is None:
                raise errors.NoAllocation(f"no block allocated to {username!r}")
            nodes = dict(self._nodes)
            for n in alloc.node_ids:
                nodes[n] = Node(n)
            allocations = dict(self._allocations)
            del allocations[username]
            self._nodes, self._allocations = nodes, allocations
            self.generation += 1
            self._directives.append(QueueDirective("delete", username, alloc.node_ids))
        return alloc

    def check_invariants(self) -> None:
        """Raise AssertionError on any broken conservation/disjointness/naming rule."""
        nodes, allocations = self._nodes, self._allocations
        seen: set[str] = set()
        for user, alloc in allocations.items():
            assert user == alloc.owner_username == alloc.queue_name, user
            assert alloc.node_ids, user
            assert alloc.lease_start < alloc.lease_end, user
            overlap = seen.intersection(alloc.node_ids)
            assert not overlap, f"nodes {sorted(overlap)} in two blocks"
            seen.update(alloc.node_ids)
            for n in alloc.node_ids:
                assert nodes[n].owner == user, n
        free = sum(1 for n in nodes.values() if n.free)
        assert free + len(seen) == len(nodes), "node conservation broken"

    def same_state(self, other: Registry) -> bool:
        return (
            self.generation == other.generation
            and self._nodes == other._nodes
            and self._allocations == other._allocations
        )

    def __repr__(self) -> str:
        return (
            f"Registry(nodes={len(self._nodes)}, free={len(self.free_node_ids())}, "
            f"blocks={sorted(self._allocations)}, generation={self.generation})"
        )


def dump_snapshot(reg: Registry) -> str:
    body_lines = []
    for node in reg.nodes.values():
        body_lines.append(f"NODE {node.node_id} FREE" if node.free else f"NODE {node.node_id} ALLOC {node.owner}")
    for user in sorted(reg.allocations):
        a = reg.allocations[user]
        body_lines.append(
            f"ALLOC {a.owner_username} {a.block_id} {a.middleware} "
            f"{a.lease_start} {a.lease_end} {','.join(a.node_ids)}"
        )
    body = "".join(line + "\n" for line in body_lines)
    crc = zlib.crc32(body.encode("utf-8"))
    return f"{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION} {reg.generation} {crc:08x}\n" + body


def save_snapshot(reg: Registry, path: str | os.PathLike) -> None:
    """Write atomically: temp file in the same directory, fsync, rename."""
    path = Path(path)
    with reg.writer:
        text = dump_snapshot(reg)
    try:
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise errors.IoFailure(f"cannot write snapshot {path}: {exc}") from exc


def parse_snapshot(text: str, middlewares: Iterable[str] | None = None) -> Registry:
    header, sep, body = text.partition("\n")
    if not sep:
        raise errors.CorruptSnapshot("missing header line")
    parts = header.split(" ")
    if len(parts) != 4 or parts[0] != SNAPSHOT_MAGIC:
        raise errors.CorruptSnapshot("bad magic or header shape")
    if parts[1] != f"v{SNAPSHOT_VERSION}":
        raise errors.CorruptSnapshot(f"unsupported snapshot version {parts[1]!r} (expected v{SNAPSHOT_VERSION})")
    try:
        generation = int(parts[2])
        crc = int(parts[3], 16)
    except ValueError as exc:
        raise errors.CorruptSnapshot("bad generation or checksum field") from exc
    if zlib.crc32(body.encode("utf-8")) != crc:
        raise errors.CorruptSnapshot("checksum mismatch")
    if body and not body.endswith("\n"):
        raise errors.CorruptSnapshot("truncated final line")

    node_owner: dict[str, str | None] = {}
    allocations: dict[str, BlockAllocation] = {}
    try:
        for line in body.splitlines():
            fields = line.split(" ")
            if fields[0] == "NODE" and len(fields) == 3 and fields[2] == "FREE":
                node_owner[fields[1]] = None
            elif fields[0] == "NODE" and len(fields) == 4 and fields[2] == "ALLOC":
                node_owner[fields[1]] = fields[3]
            elif fields[0] == "ALLOC" and len(fields) == 7:
                _, user, block_id, mw, start, end, ids = fields
                allocations[user] = BlockAllocation(user, block_id, tuple(ids.split(",")), mw, int(start), int(end))
            else:
                raise errors.CorruptSnapshot(f"unrecognised record {line!r}")
    except ValueError as exc:
        raise errors.CorruptSnapshot(f"bad numeric field: {exc}") from exc
    if not node_owner:
        raise errors.CorruptSnapshot("snapshot lists no nodes")

    reg = Registry(node_owner, middlewares)
    reg._nodes = {n: Node(n, node_owner[n]) for n in sorted(node_owner)}
    reg._allocations = dict(sorted(allocations.items()))
    reg.generation = generation
    try:
        for a in allocations.values():
            assert all(n in node_owner for n in a.node_ids), "allocation names unknown node"
        assert {n for n, o in node_owner.items() if o is not None} == {
            n for a in allocations.values() for n in a.node_ids
        }, "node states disagree with allocations"
        reg.check_invariants()
    except AssertionError as exc:
        raise errors.CorruptSnapshot(f"inconsistent snapshot: {exc}") from exc
    return reg


def load_snapshot(path: str | os.PathLike, middlewares: Iterable[str] | None = None) -> Registry:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise errors.IoFailure(f"cannot read snapshot {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise errors.CorruptSnapshot("snapshot is not UTF-8") from exc
    return parse_snapshot(text, middlewares)
