"""Stdlib HTTP shell around :class:`Gateway`, plus a small JSON client."""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from blockgate.gateway.service import Gateway

log = logging.getLogger(__name__)


def make_handler(gateway: Gateway) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _dispatch(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length > 0 else b""
            status, payload = gateway.handle(self.command, self.path, dict(self.headers.items()), body)
            data = b"" if payload is None else json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(status)
            if data:
                self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        do_GET = do_POST = do_DELETE = do_PUT = _dispatch

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

    return Handler


class _Server(ThreadingHTTPServer):
    # the stdlib default backlog of 5 resets connections under modest bursts
    request_queue_size = 128
    daemon_threads = True


class GatewayServer:
    """Threaded HTTP server; optionally advances the simulator once a second."""

    def __init__(self, gateway: Gateway, host: str, port: int, tick_interval: float | None = None):
        self.gateway = gateway
        self.httpd = _Server((host, port), make_handler(gateway))
        self.tick_interval = tick_interval
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def _ticker(self) -> None:
        while not self._stop.wait(self.tick_interval):
            self.gateway.tick()

    def start(self) -> GatewayServer:
        t = threading.Thread(target=self.httpd.serve_forever, name="blockgate-http", daemon=True)
        t.start()
        self._threads.append(t)
        if self.tick_interval:
            t = threading.Thread(target=self._ticker, name="blockgate-tick", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def serve_forever(self) -> None:
        if self.tick_interval:
            threading.Thread(target=self._ticker, name="blockgate-tick", daemon=True).start()
        try:
            self.httpd.serve_forever()
        finally:
            self._stop.set()
            self.httpd.server_close()

    def stop(self) -> None:
        self._stop.set()
        self.httpd.shutdown()
        self.httpd.server_close()
        for t in self._threads:
            t.join(timeout=5)

    def __enter__(self) -> GatewayServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def call(
    base_url: str,
    method: str,
    path: str,
    payload: dict | None = None,
    headers: dict[str, str] | None = None,
    raw_body: bytes | None = None,
    timeout: float = 10.0,
) -> tuple[int, dict | list | None]:
    """Send one request; HTTP error statuses come back as values, not exceptions."""
    data = raw_body if raw_body is not None else (None if payload is None else json.dumps(payload).encode("utf-8"))
    req = urllib.request.Request(base_url.rstrip("/") + path, data=data, method=method)
    if data is not None:
        req.add_header("Content-Type", "application/json")
    for k, v in (headers or {}).items():
        req.add_header(k, v)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            status, body = resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        status, body = exc.code, exc.read()
    return status, (json.loads(body) if body else None)
