"""Fetch the full bait site through a working proxy and judge it."""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from html.parser import HTMLParser
from typing import Callable, Iterable, Optional
from urllib.parse import urljoin, urlsplit

from .bait.certs import describe
from .bait.site import INDEX, BaitSite, bait_site, content_class
from .httpwire import FetchResult, fetch
from .model import (
    INJECTED_PATH,
    BehaviorClass,
    BehaviorVerdict,
    CertVerdict,
    EvidenceKind,
    ManipulationEvidence,
    ProxyEndpoint,
    now_ms,
)

log = logging.getLogger(__name__)

SUBRESOURCE_PARALLELISM = 6


class EndpointDead(Exception):
    """The proxy did not answer at all; no verdict is issued today."""


class _RefCollector(HTMLParser):
    TAGS = {"script": ("src",), "img": ("src",), "link": ("href",)}

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.refs: list[str] = []

    def handle_starttag(self, tag, attrs):
        wanted = self.TAGS.get(tag)
        if not wanted:
            return
        for name, value in attrs:
            if name in wanted and value:
                self.refs.append(value.strip())

    handle_startendtag = handle_starttag


@lru_cache(maxsize=256)
def references(html: bytes) -> tuple[str, ...]:
    """Raw src/href values of script, img and link elements, in document order.

    Cached: most proxies return the bait page unchanged, and parsing it
    inside a burst of concurrent audits stalls the event loop.
    """
    try:
        parser = _RefCollector()
        parser.feed(html.decode("utf-8", errors="replace"))
        parser.close()
    except Exception:
        return ()
    return tuple(parser.refs)


def _same_origin(url: str, base_url: str) -> bool:
    a, b = urlsplit(url), urlsplit(base_url)
    return (a.scheme, a.hostname, a.port) == (b.scheme, b.hostname, b.port)


def extract_subresources(html: bytes, base_url: str) -> list[str]:
    """Absolute URLs of static subresources that live on the bait origin."""
    out: list[str] = []
    for ref in references(html):
        url = urljoin(base_url, ref)
        if _same_origin(url, base_url) and url not in out:
            out.append(url)
    return out


def foreign_references(html: bytes, base_url: str) -> list[str]:
    out: list[str] = []
    for ref in references(html):
        url = urljoin(base_url, ref)
        if not _same_origin(url, base_url) and ref not in out:
            out.append(ref)
    return out


def diff_window(expected: bytes, received: bytes) -> tuple[int, int, bytes]:
    """(offset, removed_len, payload) with ``received == e[:offset] + payload + e[offset+removed_len:]``.

    The window is what remains after stripping the longest common suffix,
    then the longest common prefix; a pure deletion is widened by one byte so
    the payload is never empty (``received`` must be non-empty).
    """
    n = min(len(expected), len(received))
    # suffix first: insertions land before the shared tail (e.g. "</body>")
    s = 0
    while s < n and expected[-1 - s] == received[-1 - s]:
        s += 1
    p = 0
    while p < n - s and expected[p] == received[p]:
        p += 1
    if p == len(received) - s:
        if p > 0:
            p -= 1
        else:
            s -= 1
    return p, len(expected) - p - s, received[p : len(received) - s]


def altered_evidence(endpoint: ProxyEndpoint, path: str, expected: bytes, received: bytes,
                     ctype: str, observed_at: int) -> ManipulationEvidence:
    offset, removed, payload = diff_window(expected, received)
    return ManipulationEvidence(endpoint, path, EvidenceKind.ALTERED, payload, content_class(ctype),
                                observed_at, offset, removed)


async def check_tls(
    endpoint: ProxyEndpoint,
    tls_url: str,
    pinned_fingerprint: str,
    reference_urls: Optional[dict[str, str]] = None,
    *,
    connect_timeout: float = 3.0,
    max_duration: float = 30.0,
) -> Optional[CertVerdict]:
    """Compare the leaf certificate seen through a CONNECT tunnel with the pinned one.

    Returns None when the proxy does not tunnel TLS at all.
    """
    proxy = (endpoint.ip, endpoint.port)
    res = await fetch(tls_url, proxy=proxy, connect_timeout=connect_timeout, max_duration=max_duration)
    if not res.peer_chain:
        return None
    info = describe(res.peer_chain)
    matched = info.fingerprint == pinned_fingerprint
    refs = {}
    if not matched:
        for label, url in (reference_urls or {}).items():
            r = await fetch(url, proxy=proxy, connect_timeout=connect_timeout, max_duration=max_duration)
            if r.peer_chain:
                refs[label] = describe(r.peer_chain)
    return CertVerdict(matched, info.fingerprint, info.subject, info.issuer, info.self_signed,
                       info.chain_length, refs)


@dataclass
class _Audit:
    endpoint: ProxyEndpoint
    site: BaitSite
    observed_at: int
    evidence: list[ManipulationEvidence] = field(default_factory=list)
    fetched: int = 0
    truncated: bool = False

    def judge(self, path: str, res: FetchResult) -> None:
        expected, ctype = self.site.expected_content(path)
        body = bytes(res.body)
        if res.complete and res.failure is None:
            if body == expected:
                self.fetched += 1
            elif body:
                self.evidence.append(altered_evidence(self.endpoint, path, expected, body, ctype, self.observed_at))
            return
        # cut short: only an exact prefix of the expected bytes is acceptable
        self.truncated = True
        if body and not expected.startswith(body):
            self.evidence.append(altered_evidence(self.endpoint, path, expected, body, ctype, self.observed_at))


async def audit_behavior(
    endpoint: ProxyEndpoint,
    bait_url: str,
    *,
    max_duration: float = 45.0,
    connect_timeout: float = 3.0,
    site: Optional[BaitSite] = None,
    tls_url: Optional[str] = None,
    reference_urls: Optional[dict[str, str]] = None,
    tls_max_duration: float = 30.0,
    parallelism: int = SUBRESOURCE_PARALLELISM,
    clock: Callable[[], int] = now_ms,
) -> BehaviorVerdict:
    """Load the bait page and its static subresources through ``endpoint``.

    ``bait_url`` is the origin base URL. Raises :class:`EndpointDead` when
    the proxy returns nothing at all for the landing page.
    """
    site = site or bait_site()
    base = bait_url.rstrip("/")
    index_url = base + INDEX
    audited_at = clock()
    state = _Audit(endpoint, site, audited_at)
    proxy = (endpoint.ip, endpoint.port)
    start = time.monotonic()
    deadline = start + max_duration

    def remaining() -> float:
        return max(0.0, deadline - time.monotonic())

    index = await fetch(index_url, proxy=proxy, connect_timeout=connect_timeout, max_duration=remaining())
    if index.status is None and not index.body:
        raise EndpointDead(f"{endpoint}: {index.failure.value if index.failure else index.error}")
    state.judge(INDEX, index)
    received_index = bytes(index.body)
    expected_index = site.expected_content(INDEX)[0]

    for ref in foreign_references(received_index, index_url):
        if ref.encode() not in expected_index:
            state.evidence.append(ManipulationEvidence(endpoint, INJECTED_PATH, EvidenceKind.INJECTED,
                                                       ref.encode(), "other", audited_at))

    expected_subs = extract_subresources(expected_index, index_url)
    subs = extract_subresources(received_index, index_url)
    sem = asyncio.Semaphore(parallelism)
    last_done = index.finished

    async def get(url: str) -> tuple[str, FetchResult]:
        async with sem:
            return url, await fetch(url, proxy=proxy, connect_timeout=connect_timeout, max_duration=remaining())

    if remaining() > 0 and subs:
        for url, res in await asyncio.gather(*(get(u) for u in subs)):
            path = urlsplit(url).path
            last_done = max(last_done, res.finished)
            if path in site.objects:
                state.judge(path, res)
            elif res.status is not None:
                state.evidence.append(ManipulationEvidence(endpoint, INJECTED_PATH, EvidenceKind.INJECTED,
                                                           url.encode(), "other", audited_at))

    cert = None
    if tls_url is not None:
        cert = await check_tls(endpoint, tls_url, site.tls_leaf_fingerprint, reference_urls,
                               connect_timeout=connect_timeout, max_duration=tls_max_duration)

    objects_expected = 1 + len(expected_subs)
    fetched = min(state.fetched, objects_expected)
    complete = fetched == objects_expected
    if state.evidence or (cert is not None and not cert.matched):
        behavior = BehaviorClass.SUSPICIOUS
    elif not complete:
        behavior = BehaviorClass.UNRATED
    else:
        behavior = BehaviorClass.TRUSTED
    plt = int(round((last_done - start) * 1000)) if complete else None
    return BehaviorVerdict(
        endpoint=endpoint,
        behavior=behavior,
        evidence=tuple(state.evidence),
        cert=cert,
        synthetic_plt_ms=plt,
        objects_fetched=fetched,
        objects_expected=objects_expected,
        audited_at=audited_at,
        https_supported=cert is not None,
    )


async def run_audits(endpoints: Iterable[ProxyEndpoint], audit, parallelism: int = 32):
    """Audit endpoints concurrently; returns (verdicts in input order, inactive endpoints)."""
    sem = asyncio.Semaphore(parallelism)
    endpoints = list(endpoints)

    async def one(ep):
        async with sem:
            try:
                return await audit(ep)
            except EndpointDead as exc:
                log.info("inactive today: %s", exc)
                return None

    results = await asyncio.gather(*(one(ep) for ep in endpoints))
    verdicts = [v for v in results if v is not None]
    inactive = [ep for ep, v in zip(endpoints, results) if v is None]
    return verdicts, inactive
