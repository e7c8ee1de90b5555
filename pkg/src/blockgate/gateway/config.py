"""Gateway configuration: ``key = value`` lines, ``#`` comments.

``ca_trust`` and ``middleware`` may repeat, or list several comma-separated
``name:value`` pairs on one line. Any other key may appear once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from blockgate.errors import ConfigError

_LIST_KEYS = {"ca_trust", "middleware"}
_SCALAR_KEYS = {
    "listen_address",
    "total_nodes",
    "node_prefix",
    "proxy_ttl_s",
    "snapshot_path",
    "admin_token",
}


@dataclass
class GatewayConfig:
    listen_address: str = "127.0.0.1:8080"
    total_nodes: int = 8
    node_prefix: str = "n"
    ca_trust: list[tuple[str, str]] = field(default_factory=list)  # (ca_id, verifying key hex)
    middleware: dict[str, str] = field(default_factory=dict)
    proxy_ttl_s: int = 3600
    snapshot_path: str | None = None
    admin_token: str = ""

    def validate(self) -> GatewayConfig:
        if self.total_nodes < 1:
            raise ConfigError("total_nodes must be >= 1")
        if not self.middleware:
            raise ConfigError("at least one middleware entry is required")
        if self.proxy_ttl_s < 1:
            raise ConfigError("proxy_ttl_s must be >= 1")
        if not self.admin_token:
            raise ConfigError("admin_token must be set")
        host, sep, port = self.listen_address.rpartition(":")
        if not sep or not port.isdigit():
            raise ConfigError(f"listen_address must be host:port, got {self.listen_address!r}")
        ids = [ca for ca, _ in self.ca_trust]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate ca_id in ca_trust")
        for ca_id, key_hex in self.ca_trust:
            try:
                if len(bytes.fromhex(key_hex)) != 32:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"ca_trust {ca_id!r}: verifying key must be 32 bytes of hex") from None
        if len(set(self.middleware.values())) != len(self.middleware):
            raise ConfigError("middleware directories must be distinct")
        return self

    @property
    def host(self) -> str:
        return self.listen_address.rpartition(":")[0]

    @property
    def port(self) -> int:
        return int(self.listen_address.rpartition(":")[2])


def _pairs(key: str, value: str, lineno: int) -> list[tuple[str, str]]:
    out = []
    for item in value.split(","):
        name, sep, rest = item.strip().partition(":")
        if not sep or not name.strip() or not rest.strip():
            raise ConfigError(f"line {lineno}: {key} entries look like name:value, got {item.strip()!r}")
        out.append((name.strip(), rest.strip()))
    return out


def parse_config(text: str) -> GatewayConfig:
    cfg = GatewayConfig()
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        if key in _LIST_KEYS:
            pairs = _pairs(key, value, lineno)
            if key == "ca_trust":
                cfg.ca_trust.extend(pairs)
            else:
                for name, path in pairs:
                    if name in cfg.middleware:
                        raise ConfigError(f"line {lineno}: middleware {name!r} listed twice")
                    cfg.middleware[name] = path
            continue
        if key not in _SCALAR_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: {key} given twice")
        seen.add(key)
        if key in ("total_nodes", "proxy_ttl_s"):
            try:
                setattr(cfg, key, int(value))
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} must be an integer") from None
        else:
            setattr(cfg, key, value)
    return cfg.validate()


def load_config(path: str | Path) -> GatewayConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
