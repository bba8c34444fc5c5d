"""JSON-over-HTTP plumbing shared by the provider, gateway and consent services.

A service is a routing table ``{(method, path): handler}``; handlers take the
decoded request body (or ``None``) and return ``(status, body)``.  The same
table is served over HTTP by :func:`serve` or called directly through
:class:`LocalTransport` in tests and in-process federations.
"""
from __future__ import annotations

import logging
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from .canonical import from_wire, to_wire

log = logging.getLogger(__name__)

Handler = Callable[[Any], tuple[int, Any]]


class TransportError(Exception):
    pass


class Service:
    """Base class: subclasses fill ``self.routes``."""

    routes: dict[tuple[str, str], Handler]

    def dispatch(self, method: str, path: str, body: Any) -> tuple[int, Any]:
        handler = self.routes.get((method.upper(), path))
        if handler is None:
            return 404, {"error": "not found"}
        try:
            return handler(body)
        except (KeyError, TypeError, ValueError) as exc:
            # malformed request bodies; messages never echo request contents
            log.debug("bad request on %s %s: %s", method, path, type(exc).__name__)
            return 400, {"error": f"malformed request: {type(exc).__name__}"}


class LocalTransport:
    """Calls a service in-process, round-tripping bodies through the wire encoding."""

    def __init__(self, service: Service, delay: float = 0.0):
        self.service = service
        self.delay = delay

    def request(self, method: str, path: str, body: Any = None, timeout: float | None = None) -> tuple[int, Any]:
        if self.delay:
            threading.Event().wait(self.delay)
        wire = None if body is None else from_wire(to_wire(body))
        status, out = self.service.dispatch(method, path, wire)
        return status, from_wire(to_wire(out))


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def request(self, method: str, path: str, body: Any = None, timeout: float | None = None) -> tuple[int, Any]:
        data = None if body is None else to_wire(body).encode("utf-8")
        req = urllib.request.Request(
            self.base_url + path,
            data=data,
            method=method.upper(),
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout or self.timeout) as resp:
                return resp.status, from_wire(resp.read())
        except urllib.error.HTTPError as exc:
            payload = exc.read()
            try:
                return exc.code, from_wire(payload)
            except ValueError:
                return exc.code, {"error": payload.decode("utf-8", "replace")}
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"cannot reach {self.base_url}: {exc}") from exc


def transport_for(endpoint: str | Service, timeout: float = 10.0):
    if isinstance(endpoint, Service):
        return LocalTransport(endpoint)
    return HttpTransport(endpoint, timeout=timeout)


def _handler_class(service: Service):
    class RequestHandler(BaseHTTPRequestHandler):
        def _respond(self, method: str):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            try:
                body = from_wire(raw) if raw else None
            except ValueError:
                status, out = 400, {"error": "body is not valid JSON"}
            else:
                status, out = service.dispatch(method, self.path.split("?", 1)[0], body)
            payload = to_wire(out).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self):
            self._respond("GET")

        def do_POST(self):
            self._respond("POST")

        def log_message(self, fmt, *args):
            log.debug("%s %s", self.address_string(), fmt % args)

    return RequestHandler


def serve(service: Service, host: str = "127.0.0.1", port: int = 0, background: bool = True) -> ThreadingHTTPServer:
    """Start an HTTP server for ``service``; port 0 picks a free port."""
    server = ThreadingHTTPServer((host, port), _handler_class(service))
    server.daemon_threads = True
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    else:
        server.serve_forever()
    return server


def base_url(server: ThreadingHTTPServer) -> str:
    host, port = server.server_address[:2]
    return f"http://{host}:{port}"
