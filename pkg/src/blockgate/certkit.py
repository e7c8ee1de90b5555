"""Certificates, multi-CA trust, and proxy credentials.

Two authentication stages live here. The first checks a CA-signed
certificate against a trust store. The second checks a short-lived proxy
credential minted by the gateway after the first stage passed; the queue
re-checks it at enqueue time.

Signatures are Ed25519 (deterministic). Proxy tokens are HMAC-SHA256 under a
key that only the gateway holds.
"""

from __future__ import annotations

import base64
import binascii
import enum
import hashlib
import hmac
import re
import struct
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from blockgate import errors

USERNAME_RE = re.compile(r"[a-z][a-z0-9_]{0,31}")
_INT_RE = re.compile(r"-?(0|[1-9][0-9]*)")
_HEX_RE = re.compile(r"([0-9a-f]{2})*")
_LEN = struct.Struct(">I")


class AuthOutcome(enum.Enum):
    OK = "Ok"
    UNKNOWN_CA = "UnknownCA"
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"
    NOT_YET_VALID = "NotYetValid"
    MALFORMED = "MalformedCertificate"
    PROXY_FORGED = "ProxyForged"
    PROXY_EXPIRED = "ProxyExpired"

    @property
    def ok(self) -> bool:
        return self is AuthOutcome.OK


def valid_username(username: object) -> bool:
    return isinstance(username, str) and USERNAME_RE.fullmatch(username) is not None


def _length_prefixed(parts: Iterable[bytes]) -> bytes:
    return b"".join(_LEN.pack(len(p)) + p for p in parts)


@dataclass(frozen=True)
class CAIdentity:
    ca_id: str
    signing_key: bytes = field(repr=False)
    verifying_key: bytes

    def sign(self, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.signing_key).sign(message)


def ca_keygen(ca_id: str, seed: int) -> CAIdentity:
    """Derive a CA key pair deterministically from ``(ca_id, seed)``."""
    if not isinstance(ca_id, str) or not ca_id or any(c.isspace() for c in ca_id):
        raise errors.InvalidCAId(f"bad CA id {ca_id!r}")
    material = hashlib.sha256(
        b"blockgate-ca\x00" + ca_id.encode("utf-8") + b"\x00"
        + (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "big")
    ).digest()
    private = Ed25519PrivateKey.from_private_bytes(material)
    return CAIdentity(
        ca_id=ca_id,
        signing_key=private.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption()),
        verifying_key=private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw),
    )


@dataclass(frozen=True)
class Certificate:
    subject_username: str
    issuer_ca_id: str
    not_before: int
    not_after: int
    subject_key: bytes
    signature: bytes = b""

    def canonical(self) -> bytes:
        """Length-prefixed encoding of every field except the signature."""
        return _length_prefixed(
            s.encode("utf-8")
            for s in (
                self.subject_username,
                self.issuer_ca_id,
                str(self.not_before),
                str(self.not_after),
                self.subject_key.hex(),
            )
        )

    def to_bytes(self) -> bytes:
        return self.canonical() + _LEN.pack(len(self.signature)) + self.signature

    def to_wire(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def from_bytes(cls, blob: bytes) -> Certificate:
        """Strict decode; the input must be exactly what ``to_bytes`` would produce."""
        fields: list[bytes] = []
        pos = 0
        try:
            for _ in range(6):
                (n,) = _LEN.unpack_from(blob, pos)
                pos += _LEN.size
                if pos + n > len(blob):
                    raise errors.MalformedCertificate("field runs past end of blob")
                fields.append(blob[pos : pos + n])
                pos += n
        except struct.error as exc:
            raise errors.MalformedCertificate("truncated certificate") from exc
        if pos != len(blob):
            raise errors.MalformedCertificate("trailing bytes after signature")
        try:
            user, issuer, nb, na, key_hex = (f.decode("utf-8") for f in fields[:5])
        except UnicodeDecodeError as exc:
            raise errors.MalformedCertificate("field is not UTF-8") from exc
        if not (_INT_RE.fullmatch(nb) and _INT_RE.fullmatch(na)):
            raise errors.MalformedCertificate("validity bounds are not decimal integers")
        if not _HEX_RE.fullmatch(key_hex):
            raise errors.MalformedCertificate("subject key is not lowercase hex")
        if not valid_username(user) or not issuer:
            raise errors.MalformedCertificate("bad subject or issuer")
        cert = cls(user, issuer, int(nb), int(na), binascii.unhexlify(key_hex), fields[5])
        if cert.to_bytes() != blob:
            raise errors.MalformedCertificate("non-canonical encoding")
        return cert

    @classmethod
    def from_wire(cls, text: str) -> Certificate:
        try:
            blob = base64.b64decode(text, validate=True)
        except (binascii.Error, ValueError, TypeError) as exc:
            raise errors.MalformedCertificate("userCA is not valid base64") from exc
        # unused trailing bits would otherwise let two texts decode alike
        if base64.b64encode(blob).decode("ascii") != text:
            raise errors.MalformedCertificate("non-canonical base64")
        return cls.from_bytes(blob)


def _default_subject_key(ca: CAIdentity, username: str) -> bytes:
    return hashlib.sha256(b"subject\x00" + ca.verifying_key + username.encode()).digest()


def ca_issue(
    ca: CAIdentity,
    username: str,
    not_before: int,
    not_after: int,
    subject_key: bytes | None = None,
) -> Certificate:
    if not valid_username(username):
        raise errors.InvalidUsername(f"username {username!r} does not match {USERNAME_RE.pattern}")
    if not not_before < not_after:
        raise errors.InvalidValidity(f"empty validity window [{not_before}, {not_after})")
    if subject_key is None:
        subject_key = _default_subject_key(ca, username)
    unsigned = Certificate(username, ca.ca_id, int(not_before), int(not_after), bytes(subject_key))
    return Certificate(
        unsigned.subject_username,
        unsigned.issuer_ca_id,
        unsigned.not_before,
        unsigned.not_after,
        unsigned.subject_key,
        ca.sign(unsigned.canonical()),
    )


class TrustStore:
    """Static ca_id -> verifying key table. Read-only once built."""

    def __init__(self, entries: Mapping[str, bytes] | Iterable[tuple[str, bytes]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        table: dict[str, bytes] = {}
        for ca_id, key in items:
            if not ca_id:
                raise errors.InvalidCAId("empty CA id in trust store")
            if ca_id in table:
                raise errors.DuplicateCA(f"CA {ca_id!r} listed twice")
            table[ca_id] = bytes(key)
        self._entries = MappingProxyType(table)

    @classmethod
    def of(cls, *cas: CAIdentity) -> TrustStore:
        return cls((ca.ca_id, ca.verifying_key) for ca in cas)

    @property
    def entries(self) -> Mapping[str, bytes]:
        return self._entries

    def without(self, ca_id: str) -> TrustStore:
        return TrustStore((k, v) for k, v in self._entries.items() if k != ca_id)

    def __contains__(self, ca_id: object) -> bool:
        return ca_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"TrustStore({sorted(self._entries)})"


def verify_certificate(cert: Certificate, store: TrustStore, now: int) -> AuthOutcome:
    key = store.entries.get(cert.issuer_ca_id)
    if key is None:
        return AuthOutcome.UNKNOWN_CA
    try:
        Ed25519PublicKey.from_public_bytes(key).verify(cert.signature, cert.canonical())
    except (InvalidSignature, ValueError):
        return AuthOutcome.BAD_SIGNATURE
    if now < cert.not_before:
        return AuthOutcome.NOT_YET_VALID
    if now >= cert.not_after:
        return AuthOutcome.EXPIRED
    return AuthOutcome.OK


def extract_username(cert: Certificate) -> str:
    return cert.subject_username


@dataclass(frozen=True)
class ProxyCredential:
    subject_username: str
    issued_at: int
    expires_at: int
    token: bytes = field(repr=False)

    def bound_fields(self) -> bytes:
        return _length_prefixed(
            s.encode("utf-8")
            for s in ("blockgate-proxy-v1", self.subject_username, str(self.issued_at), str(self.expires_at))
        )

    def to_dict(self) -> dict:
        return {
            "subject_username": self.subject_username,
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
            "token": self.token.hex(),
        }


def _proxy_mac(proxy_key: bytes, proxy: ProxyCredential) -> bytes:
    return hmac.new(proxy_key, proxy.bound_fields(), hashlib.sha256).digest()


def issue_proxy(cert: Certificate, now: int, ttl_s: int, proxy_key: bytes) -> ProxyCredential:
    # Caller must have run verify_certificate first.
    if not isinstance(ttl_s, int) or ttl_s <= 0:
        raise errors.InvalidTTL(f"ttl_s must be a positive integer, got {ttl_s!r}")
    draft = ProxyCredential(cert.subject_username, now, now + ttl_s, b"")
    return ProxyCredential(draft.subject_username, draft.issued_at, draft.expires_at, _proxy_mac(proxy_key, draft))


def verify_proxy(proxy: ProxyCredential, now: int, proxy_key: bytes) -> AuthOutcome:
    if proxy.expires_at <= proxy.issued_at:
        return AuthOutcome.PROXY_FORGED
    if not hmac.compare_digest(_proxy_mac(proxy_key, proxy), proxy.token):
        return AuthOutcome.PROXY_FORGED
    if now >= proxy.expires_at:
        return AuthOutcome.PROXY_EXPIRED
    return AuthOutcome.OK


def raise_for_proxy(outcome: AuthOutcome) -> None:
    if outcome is AuthOutcome.PROXY_FORGED:
        raise errors.ProxyForged("proxy token does not match its bound fields")
    if outcome is AuthOutcome.PROXY_EXPIRED:
        raise errors.ProxyExpired("proxy credential expired")
