"""Does a candidate actually proxy, and how anonymously?"""

from __future__ import annotations

import asyncio
import json
import logging
import re
import time
import uuid
from typing import AsyncIterator, Awaitable, Callable, Iterable, Optional, Sequence
from urllib.parse import urlsplit

from .analysis.similarity import similarity_score
from .bait.origin import LOG_ROUTE, TOKEN_PARAM
from .bait.site import expected_content
from .httpwire import fetch
from .model import (
    AnonymityLevel,
    FailureKind,
    Headers,
    HostCategory,
    ProbeOutcome,
    ProxyEndpoint,
    canonical_headers,
    now_ms,
)

log = logging.getLogger(__name__)

WORKING_THRESHOLD = 0.5

PROBE_HEADERS: Headers = [
    ("User-Agent", "proxyaudit/0.1"),
    ("Accept", "*/*"),
    ("Cache-Control", "no-cache"),
    ("Connection", "close"),
]

# headers whose mere presence announces an intermediary
REVEALING = frozenset({
    "via", "x-proxy-id", "proxy-connection", "x-forwarded-for", "forwarded",
    "x-real-ip", "client-ip", "x-client-ip", "forwarded-for", "x-bluecoat-via",
})

OriginLookup = Callable[[str], Awaitable[Optional[Headers]]]


def classify_outcome(similarity: Optional[float] = None, failure_kind: Optional[FailureKind] = None,
                     threshold: float = WORKING_THRESHOLD) -> HostCategory:
    if (similarity is None) == (failure_kind is None):
        raise ValueError("exactly one of similarity and failure_kind must be given")
    if failure_kind is not None:
        return HostCategory.UNRESPONSIVE if failure_kind.is_timeout else HostCategory.UNREACHABLE
    return HostCategory.WORKING if similarity >= threshold else HostCategory.OTHER


def _ip_pattern(ip: str) -> re.Pattern:
    return re.compile(r"(?<![\d.])" + re.escape(ip) + r"(?![\d.])")


def classify_anonymity(origin_recv_headers: Sequence[tuple[str, str]], client_public_ip: str,
                       client_sent: Sequence[tuple[str, str]] = ()) -> AnonymityLevel:
    """Transparent if the client IP leaks, Anonymous if a proxy announces itself, else Elite.

    Every header value is scanned for the client IP, except ``Host`` and
    headers forwarded exactly as the client sent them (those were not added
    by the proxy).
    """
    own = set(canonical_headers(client_sent))
    leak = _ip_pattern(client_public_ip)
    headers = canonical_headers(origin_recv_headers)
    for name, value in headers:
        if name == "host" or (name, value) in own:
            continue
        if leak.search(value):
            return AnonymityLevel.TRANSPARENT
    if any(name in REVEALING for name, _ in headers):
        return AnonymityLevel.ANONYMOUS
    return AnonymityLevel.ELITE


def with_token(url: str, token: str) -> str:
    sep = "&" if urlsplit(url).query else "?"
    return f"{url}{sep}{TOKEN_PARAM}={token}"


def local_lookup(origin) -> OriginLookup:
    """Join probes to an in-process origin's request log."""

    async def lookup(token: str) -> Optional[Headers]:
        entry = origin.lookup(token)
        return None if entry is None else list(entry.headers)

    return lookup


def http_lookup(origin_base_url: str, timeout: float = 5.0) -> OriginLookup:
    """Join probes to a remote origin through its request-log route."""

    async def lookup(token: str) -> Optional[Headers]:
        res = await fetch(origin_base_url.rstrip("/") + LOG_ROUTE + token, max_duration=timeout)
        if not res.ok or res.status != 200:
            return None
        return [tuple(h) for h in json.loads(bytes(res.body))["headers"]]

    return lookup


async def probe_endpoint(
    endpoint: ProxyEndpoint,
    bait_url: str,
    *,
    origin_lookup: OriginLookup,
    client_ip: str,
    connect_timeout: float = 3.0,
    max_duration: float = 30.0,
    expected: Optional[bytes] = None,
    threshold: float = WORKING_THRESHOLD,
    clock: Callable[[], int] = now_ms,
) -> ProbeOutcome:
    """Fetch the bait object once through ``endpoint`` and categorise the host."""
    if expected is None:
        expected = expected_content(urlsplit(bait_url).path)[0]
    token = uuid.uuid4().hex
    probed_at = clock()
    res = await fetch(with_token(bait_url, token), proxy=(endpoint.ip, endpoint.port), headers=PROBE_HEADERS,
                      connect_timeout=connect_timeout, max_duration=max_duration)
    similarity: Optional[float] = None
    anonymity = None
    origin_view: Headers = []
    if res.failure is not None:
        category = classify_outcome(None, res.failure)
    else:
        similarity = similarity_score(expected, bytes(res.body))
        category = classify_outcome(similarity, None, threshold)
        seen = await origin_lookup(token)
        if seen is not None:
            origin_view = seen
        if category is HostCategory.WORKING:
            if seen is None:
                # correct bytes without reaching our origin: served from a cache we asked to bypass
                log.info("%s: content never reached origin; not counted as working", endpoint)
                category = HostCategory.OTHER
            else:
                anonymity = classify_anonymity(seen, client_ip, res.sent_headers)
    return ProbeOutcome(
        endpoint=endpoint,
        category=category,
        similarity=similarity,
        anonymity=anonymity,
        client_sent_headers=list(res.sent_headers),
        client_recv_headers=list(res.headers),
        origin_recv_headers=origin_view,
        connect_ms=res.connect_ms,
        total_ms=res.total_ms,
        probed_at=probed_at,
        failure_kind=res.failure,
    )


ProbeFn = Callable[[ProxyEndpoint], Awaitable[ProbeOutcome]]


class Phase2Run:
    """Probe a potential list in order with bounded parallelism and a time budget.

    Iterate asynchronously to receive outcomes in completion order. When the
    budget runs out, in-flight probes are abandoned and they, plus the
    untested tail, end up in ``skipped``.
    """

    def __init__(self, potential: Iterable[ProxyEndpoint], probe: ProbeFn, parallelism: int = 64,
                 budget: float = 24 * 3600.0) -> None:
        if parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        seen = set()
        self.queue: list[ProxyEndpoint] = []
        for ep in potential:
            if ep.key not in seen:
                seen.add(ep.key)
                self.queue.append(ep)
        self.probe = probe
        self.parallelism = parallelism
        self.budget = budget
        self.skipped: list[ProxyEndpoint] = []
        self.tested: list[ProxyEndpoint] = []

    async def __aiter__(self) -> AsyncIterator[ProbeOutcome]:
        deadline = time.monotonic() + self.budget
        results: asyncio.Queue = asyncio.Queue()
        inflight: dict[asyncio.Task, ProxyEndpoint] = {}
        sem = asyncio.Semaphore(self.parallelism)

        def done(task: asyncio.Task) -> None:
            sem.release()
            results.put_nowait(task)

        async def feed() -> None:
            for ep in self.queue:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return
                try:
                    await asyncio.wait_for(sem.acquire(), remaining)
                except asyncio.TimeoutError:
                    return
                if time.monotonic() >= deadline:
                    sem.release()
                    return
                task = asyncio.ensure_future(self.probe(ep))
                inflight[task] = ep
                task.add_done_callback(done)

        feeder = asyncio.ensure_future(feed())
        try:
            while True:
                if feeder.done() and not inflight:
                    break
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                getter = asyncio.ensure_future(results.get())
                waiters = {getter} if feeder.done() else {getter, feeder}
                finished, _ = await asyncio.wait(waiters, timeout=remaining, return_when=asyncio.FIRST_COMPLETED)
                if getter not in finished:
                    getter.cancel()
                    continue
                task = getter.result()
                ep = inflight.pop(task)
                if task.cancelled():
                    continue
                exc = task.exception()
                if exc is not None:
                    log.error("probe of %s failed: %r", ep, exc)
                    self.skipped.append(ep)
                    continue
                self.tested.append(ep)
                yield task.result()
        finally:
            feeder.cancel()
            await asyncio.gather(feeder, return_exceptions=True)
            for task in inflight:
                task.cancel()
            await asyncio.gather(*inflight, return_exceptions=True)
            # abandoned in-flight probes and the untested tail, in list order
            tested = {ep.key for ep in self.tested} | {ep.key for ep in self.skipped}
            self.skipped.extend(ep for ep in self.queue if ep.key not in tested)
            order = {ep.key: i for i, ep in enumerate(self.queue)}
            self.skipped.sort(key=lambda ep: order[ep.key])


def run_phase2(potential: Iterable[ProxyEndpoint], probe: ProbeFn, parallelism: int = 64,
               budget: float = 24 * 3600.0) -> Phase2Run:
    return Phase2Run(potential, probe, parallelism, budget)
