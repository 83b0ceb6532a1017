"""Pick the best trusted proxy and collect anonymous usage statistics."""

from __future__ import annotations

import json
import logging
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from datetime import timedelta
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterable, Optional
from urllib.parse import parse_qs, urlsplit

from .ledger import codec
from .ledger.geo import GeoTable
from .ledger.stats import ProxyStats, compute_stats
from .ledger.store import Ledger, read_lines
from .model import AnonymityLevel, BehaviorClass, ProxyEndpoint, UsageReport, ValidationError, day_of, now_ms

log = logging.getLogger(__name__)

NO_TRUSTED = "no-trusted"
NO_MATCH_COUNTRY = "no-match-country"
NO_MATCH_ANONYMITY = "no-match-anonymity"

_COUNTRY = re.compile(r"^[A-Z]{2}$")


@dataclass(frozen=True)
class SelectionQuery:
    country: Optional[str] = None
    anonymity: Optional[AnonymityLevel] = None

    def __post_init__(self) -> None:
        if self.country is not None and not _COUNTRY.match(self.country):
            raise ValidationError("invalid", f"bad country code {self.country!r}")
        if self.anonymity is not None and not isinstance(self.anonymity, AnonymityLevel):
            raise ValidationError("invalid", "anonymity must be an AnonymityLevel")

    @classmethod
    def parse(cls, country: Optional[str] = None, anonymity: Optional[str] = None) -> "SelectionQuery":
        level = None
        if anonymity:
            try:
                level = AnonymityLevel(anonymity.lower())
            except ValueError:
                raise ValidationError("invalid", f"bad anonymity level {anonymity!r}") from None
        return cls(country.upper() if country else None, level)


@dataclass(frozen=True)
class Selection:
    endpoint: ProxyEndpoint
    country: str
    anonymity: Optional[AnonymityLevel]
    recent_median_pdt_ms: Optional[int]

    def to_json(self) -> dict:
        return {
            "endpoint": str(self.endpoint), "ip": self.endpoint.ip, "port": self.endpoint.port,
            "country": self.country, "anonymity": self.anonymity.value if self.anonymity else None,
            "recent_median_pdt_ms": self.recent_median_pdt_ms,
        }


@dataclass
class Snapshot:
    """Immutable view of the ledger that selection and summaries read from."""
    stats: list[ProxyStats] = field(default_factory=list)
    usage: list[UsageReport] = field(default_factory=list)
    as_of_ms: int = 0
    last_seq: int = 0
    window_days: int = 7

    @classmethod
    def from_records(cls, records: Iterable, geo: Optional[GeoTable] = None, as_of_ms: Optional[int] = None,
                     window_days: int = 7, last_seq: int = 0) -> "Snapshot":
        records = list(records)
        as_of = now_ms() if as_of_ms is None else as_of_ms
        usage = [r for r in records if isinstance(r, UsageReport)]
        return cls(compute_stats(records, geo, as_of), usage, as_of, last_seq, window_days)

    @classmethod
    def from_ledger(cls, path, geo: Optional[GeoTable] = None, as_of_ms: Optional[int] = None,
                    window_days: int = 7) -> "Snapshot":
        objs = list(read_lines(path))
        last = objs[-1]["seq"] if objs else 0
        return cls.from_records((codec.decode(o) for o in objs), geo, as_of_ms, window_days, last)

    def candidates(self) -> list[ProxyStats]:
        """Trusted on their latest audit, active within the window, never caught manipulating."""
        today = day_of(self.as_of_ms)
        horizon = today - timedelta(days=self.window_days)
        return [s for s in self.stats
                if s.latest_behavior is BehaviorClass.TRUSTED and not s.ever_suspicious and s.last_active > horizon]


def _rank(s: ProxyStats):
    pdt = s.recent_median_pdt_ms
    return (pdt is None, pdt if pdt is not None else 0, -s.uptime_days, s.endpoint.sort_key())


def select_proxy(snapshot: Snapshot, query: SelectionQuery = SelectionQuery()) -> tuple[Optional[Selection], Optional[str]]:
    """(selection, None) or (None, reason code)."""
    pool = snapshot.candidates()
    if not pool:
        return None, NO_TRUSTED
    if query.country is not None:
        pool = [s for s in pool if s.country == query.country]
        if not pool:
            return None, NO_MATCH_COUNTRY
    if query.anonymity is not None:
        pool = [s for s in pool if s.anonymity is query.anonymity]
        if not pool:
            return None, NO_MATCH_ANONYMITY
    best = min(pool, key=_rank)
    return Selection(best.endpoint, best.country, best.anonymity, best.recent_median_pdt_ms), None


def _frac(part: float, whole: float) -> float:
    return part / whole if whole else 0.0


def usage_summary(reports: Iterable[UsageReport], start_ms: Optional[int] = None,
                  end_ms: Optional[int] = None) -> dict:
    """Totals and per-country / geo-localized / anonymity breakdowns.

    A report belongs to the window when its download started inside it.
    Geo-localized fractions are taken over reports that carry the flag.
    """
    rs = [r for r in reports
          if (start_ms is None or r.download_start >= start_ms) and (end_ms is None or r.download_start <= end_ms)]
    total_bytes = sum(r.http_bytes + r.https_bytes for r in rs)
    by_country: Counter = Counter()
    bytes_country: Counter = Counter()
    anon: Counter = Counter()
    for r in rs:
        by_country[r.proxy_country] += 1
        bytes_country[r.proxy_country] += r.http_bytes + r.https_bytes
        anon[r.anonymity_used.value] += 1
    flagged = [r for r in rs if r.geo_localized is not None]
    geo = [r for r in flagged if r.geo_localized]
    flagged_bytes = sum(r.http_bytes + r.https_bytes for r in flagged)
    return {
        "downloads": len(rs),
        "http_requests": sum(r.http_requests for r in rs),
        "https_requests": sum(r.https_requests for r in rs),
        "http_bytes": sum(r.http_bytes for r in rs),
        "https_bytes": sum(r.https_bytes for r in rs),
        "countries": {
            cc: {"downloads": _frac(n, len(rs)), "bytes": _frac(bytes_country[cc], total_bytes)}
            for cc, n in sorted(by_country.items())
        },
        "geo_localized": {
            "downloads": _frac(len(geo), len(flagged)),
            "bytes": _frac(sum(r.http_bytes + r.https_bytes for r in geo), flagged_bytes),
        },
        "anonymity": {level.value: _frac(anon[level.value], len(rs)) for level in AnonymityLevel},
        "size_vs_duration": [[r.http_bytes + r.https_bytes, r.download_end - r.download_start] for r in rs],
    }


class SelectionService:
    """Serves selections from a snapshot refreshed on an interval; appends usage through the ledger writer."""

    def __init__(self, ledger: Ledger, geo: Optional[GeoTable] = None, window_days: int = 7,
                 clock=now_ms) -> None:
        self.ledger = ledger
        self.geo = geo
        self.window_days = window_days
        self.clock = clock
        self._pending: list[tuple[int, UsageReport]] = []
        self._pending_lock = threading.Lock()
        self.snapshot = Snapshot(window_days=window_days)
        self.refresh()

    def refresh(self) -> Snapshot:
        snap = Snapshot.from_ledger(self.ledger.path, self.geo, self.clock(), self.window_days)
        with self._pending_lock:
            self._pending = [(seq, r) for seq, r in self._pending if seq > snap.last_seq]
        self.snapshot = snap  # single reference swap
        return snap

    def select(self, query: SelectionQuery) -> tuple[Optional[Selection], Optional[str]]:
        return select_proxy(self.snapshot, query)

    def ingest_usage(self, payload) -> tuple[bool, Optional[str]]:
        """(True, None) when accepted and appended, else (False, reason)."""
        try:
            report = codec.usage_from(payload)
        except ValidationError as exc:
            return False, exc.reason
        seq = self.ledger.append(report)
        with self._pending_lock:
            self._pending.append((seq, report))
        return True, None

    def summary(self) -> dict:
        snap = self.snapshot
        with self._pending_lock:
            extra = [r for seq, r in self._pending if seq > snap.last_seq]
        out = usage_summary(snap.usage + extra)
        out["proxies_per_country"] = dict(sorted(Counter(s.country for s in snap.candidates()).items()))
        return out


class _Handler(BaseHTTPRequestHandler):
    service: SelectionService
    protocol_version = "HTTP/1.1"
    MAX_BODY = 64 * 1024

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _reply(self, status: int, body: dict) -> None:
        data = json.dumps(body, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        url = urlsplit(self.path)
        if url.path == "/v1/select":
            qs = parse_qs(url.query)
            try:
                query = SelectionQuery.parse(qs.get("country", [None])[0], qs.get("anonymity", [None])[0])
            except ValidationError as exc:
                return self._reply(400, {"error": exc.reason, "detail": str(exc)})
            sel, reason = self.service.select(query)
            if sel is None:
                return self._reply(200, {"proxy": None, "reason": reason})
            return self._reply(200, {"proxy": sel.to_json(), "reason": None})
        if url.path == "/v1/summary":
            return self._reply(200, self.service.summary())
        self._reply(404, {"error": "not-found"})

    def do_POST(self):
        if urlsplit(self.path).path != "/v1/usage":
            return self._reply(404, {"error": "not-found"})
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = -1
        if not 0 <= length <= self.MAX_BODY:
            return self._reply(413 if length > self.MAX_BODY else 400, {"accepted": False, "reason": "invalid"})
        try:
            payload = json.loads(self.rfile.read(length) or b"null")
        except ValueError:
            return self._reply(400, {"accepted": False, "reason": "invalid"})
        ok, reason = self.service.ingest_usage(payload)
        self._reply(200 if ok else 422, {"accepted": ok, "reason": reason})


class ServiceServer:
    """HTTP front end plus the snapshot refresh thread."""

    def __init__(self, service: SelectionService, host: str = "127.0.0.1", port: int = 0,
                 snapshot_interval: float = 60.0) -> None:
        handler = type("Handler", (_Handler,), {"service": service})
        self.service = service
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self.interval = snapshot_interval
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def _refresher(self) -> None:
        while not self._stop.wait(self.interval):
            try:
                self.service.refresh()
            except Exception:
                log.exception("snapshot refresh failed; keeping the previous one")

    def start(self) -> "ServiceServer":
        for target in (self.httpd.serve_forever, self._refresher):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def serve_forever(self) -> None:
        t = threading.Thread(target=self._refresher, daemon=True)
        t.start()
        try:
            self.httpd.serve_forever()
        finally:
            self._stop.set()

    def close(self) -> None:
        self._stop.set()
        self.httpd.shutdown()
        self.httpd.server_close()
        for t in self._threads:
            t.join(timeout=5)

    def __enter__(self) -> "ServiceServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()
