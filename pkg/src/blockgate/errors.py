"""Exception hierarchy.

Every error carries a stable ``code`` string. The gateway uses that code on
the wire and maps it to an HTTP status, so codes must never change once
published.
"""

from __future__ import annotations


class BlockgateError(Exception):
    code = "BlockgateError"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail or self.code


# certkit
class InvalidCAId(BlockgateError):
    code = "InvalidCAId"


class InvalidUsername(BlockgateError):
    code = "InvalidUsername"


class InvalidValidity(BlockgateError):
    code = "InvalidValidity"


class InvalidTTL(BlockgateError):
    code = "InvalidTTL"


class MalformedCertificate(BlockgateError):
    code = "MalformedCertificate"


class DuplicateCA(BlockgateError):
    code = "DuplicateCA"


# registry
class DuplicateAllocation(BlockgateError):
    code = "DuplicateAllocation"


class InsufficientNodes(BlockgateError):
    code = "InsufficientNodes"


class UnknownMiddleware(BlockgateError):
    code = "UnknownMiddleware"


class InvalidLease(BlockgateError):
    code = "InvalidLease"


class NoAllocation(BlockgateError):
    code = "NoAllocation"


class LeaseExpired(BlockgateError):
    code = "LeaseExpired"


class CorruptSnapshot(BlockgateError):
    code = "CorruptSnapshot"


class IoFailure(BlockgateError):
    code = "IoFailure"


# pqueue
class NameMismatch(BlockgateError):
    code = "NameMismatch"


class DuplicateQueue(BlockgateError):
    code = "DuplicateQueue"


class EmptyNodeSet(BlockgateError):
    code = "EmptyNodeSet"


class UnknownQueue(BlockgateError):
    code = "UnknownQueue"


class NotAuthorized(BlockgateError):
    code = "NotAuthorized"


class ProxyForged(BlockgateError):
    code = "ProxyForged"


class ProxyExpired(BlockgateError):
    code = "ProxyExpired"


class OversizedJob(BlockgateError):
    code = "OversizedJob"


class BadState(BlockgateError):
    code = "BadState"


class IllegalTransition(BlockgateError):
    code = "IllegalTransition"


# router
class AuthRejected(BlockgateError):
    """Stage-one failure. ``reason`` is the certkit outcome that caused it."""

    code = "AuthRejected"

    def __init__(self, reason, detail: str = ""):
        self.reason = reason
        super().__init__(detail or f"certificate rejected: {reason.value}")


class UsernameMismatch(BlockgateError):
    code = "UsernameMismatch"


class MiddlewareMismatch(BlockgateError):
    code = "MiddlewareMismatch"


# gram_sim
class InternalInconsistency(BlockgateError):
    code = "InternalInconsistency"


class Timeout(BlockgateError):
    code = "Timeout"

    def __init__(self, max_steps: int, detail: str = ""):
        self.max_steps = max_steps
        super().__init__(detail or f"work remains after {max_steps} steps")


class UnknownJob(BlockgateError):
    code = "UnknownJob"


# gateway
class ConfigError(BlockgateError):
    code = "ConfigError"
