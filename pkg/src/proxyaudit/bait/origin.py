"""Embedded HTTP + HTTPS origin serving fixed objects and logging requests."""

from __future__ import annotations

import asyncio
import json
import logging
import ssl
import threading
from dataclasses import dataclass
from typing import Optional
from urllib.parse import parse_qs, urlsplit

from ..httpwire import ProtocolError, encode_head, read_head
from ..model import Headers, now_ms
from .certs import server_context
from .site import bait_site

log = logging.getLogger(__name__)

TOKEN_PARAM = "probe"
LOG_ROUTE = "/__log/"


@dataclass(frozen=True)
class LoggedRequest:
    seq: int
    ts: int
    peer: str
    tls: bool
    method: str
    target: str
    headers: Headers

    @property
    def token(self) -> Optional[str]:
        values = parse_qs(urlsplit(self.target).query).get(TOKEN_PARAM)
        return values[0] if values else None


class RequestLog:
    """Append-only request log; appends are serialized, reads are snapshots."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: list[LoggedRequest] = []
        self._by_token: dict[str, LoggedRequest] = {}

    def append(self, **fields) -> LoggedRequest:
        with self._lock:
            entry = LoggedRequest(seq=len(self._entries), **fields)
            self._entries.append(entry)
            tok = entry.token
            if tok is not None:
                self._by_token.setdefault(tok, entry)
            return entry

    def snapshot(self) -> list[LoggedRequest]:
        with self._lock:
            return list(self._entries)

    def lookup(self, token: str) -> Optional[LoggedRequest]:
        with self._lock:
            return self._by_token.get(token)


def response_baseline(content_type: str, length: int) -> Headers:
    """The exact response headers the origin sends for a served object."""
    return [
        ("Server", "proxyaudit-origin"),
        ("Content-Type", content_type),
        ("Content-Length", str(length)),
        ("Cache-Control", "no-store"),
        ("Connection", "close"),
    ]


class Origin:
    """Serves ``objects`` byte-exactly over HTTP and, optionally, TLS."""

    def __init__(self, objects: Optional[dict[str, tuple[bytes, str]]] = None,
                 tls_context: Optional[ssl.SSLContext] = None, name: str = "bait") -> None:
        self.objects = dict(objects if objects is not None else bait_site().objects)
        self.tls_context = tls_context
        self.name = name
        self.log = RequestLog()
        self._servers: list[asyncio.AbstractServer] = []
        self.host = "127.0.0.1"
        self.http_port = 0
        self.tls_port: Optional[int] = None

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.http_port}"

    @property
    def tls_base_url(self) -> Optional[str]:
        return None if self.tls_port is None else f"https://{self.host}:{self.tls_port}"

    def lookup(self, token: str) -> Optional[LoggedRequest]:
        return self.log.lookup(token)

    async def start(self, host: str = "127.0.0.1", http_port: int = 0, tls_port: Optional[int] = 0) -> "Origin":
        self.host = host
        srv = await asyncio.start_server(lambda r, w: self._handle(r, w, False), host, http_port, backlog=1024)
        self._servers.append(srv)
        self.http_port = srv.sockets[0].getsockname()[1]
        if self.tls_context is not None and tls_port is not None:
            tsrv = await asyncio.start_server(lambda r, w: self._handle(r, w, True), host, tls_port,
                                              ssl=self.tls_context, backlog=1024)
            self._servers.append(tsrv)
            self.tls_port = tsrv.sockets[0].getsockname()[1]
        return self

    async def close(self) -> None:
        for srv in self._servers:
            srv.close()
        for srv in self._servers:
            await srv.wait_closed()
        self._servers.clear()

    async def _handle(self, reader, writer, tls: bool) -> None:
        try:
            line, headers = await read_head(reader)
            peer = writer.get_extra_info("peername") or ("?", 0)
            method, target = (line.split(" ") + ["", ""])[:2]
            self.log.append(ts=now_ms(), peer=peer[0], tls=tls, method=method, target=target, headers=headers)
            writer.write(self._respond(method, target))
            await writer.drain()
        except (EOFError, ProtocolError, ConnectionError, ssl.SSLError, asyncio.IncompleteReadError):
            pass
        except Exception:  # pragma: no cover - never let one client kill the server
            log.exception("origin handler failed")
        finally:
            writer.close()

    def _respond(self, method: str, target: str) -> bytes:
        path = urlsplit(target).path
        if path.startswith(LOG_ROUTE):
            entry = self.log.lookup(path[len(LOG_ROUTE):])
            if entry is None:
                return _plain(404, "Not Found", b"unknown token\n")
            body = json.dumps({"peer": entry.peer, "headers": entry.headers}).encode()
            return _plain(200, "OK", body, "application/json")
        if method not in ("GET", "HEAD"):
            return _plain(405, "Method Not Allowed", b"method not allowed\n")
        obj = self.objects.get(path)
        if obj is None:
            return _plain(404, "Not Found", b"not found\n")
        body, ctype = obj
        head = encode_head("HTTP/1.1 200 OK", response_baseline(ctype, len(body)))
        return head if method == "HEAD" else head + body


def _plain(status: int, reason: str, body: bytes, ctype: str = "text/plain") -> bytes:
    return encode_head(f"HTTP/1.1 {status} {reason}", response_baseline(ctype, len(body))) + body


async def serve_bait(host: str = "127.0.0.1", http_port: int = 0, tls_port: Optional[int] = 0,
                     tls_context: Optional[ssl.SSLContext] = None) -> Origin:
    """Start the bait origin; close it with ``await origin.close()``."""
    origin = Origin(bait_site().objects, tls_context or server_context("bait"), name="bait")
    return await origin.start(host, http_port, tls_port)
