"""Builders for typed records with sensible defaults."""

from datetime import date, datetime, timezone

from proxyaudit.model import (
    AnonymityLevel,
    BehaviorClass,
    BehaviorVerdict,
    CertVerdict,
    EvidenceKind,
    FailureKind,
    HostCategory,
    ManipulationEvidence,
    PerfSample,
    ProbeOutcome,
    ProxyEndpoint,
    UsageReport,
)


def ms(day: date, hour: int = 12) -> int:
    return int(datetime(day.year, day.month, day.day, hour, tzinfo=timezone.utc).timestamp() * 1000)


def probe(ep: ProxyEndpoint, category: HostCategory, at: int, anonymity=AnonymityLevel.ELITE) -> ProbeOutcome:
    working = category is HostCategory.WORKING
    failed = category in (HostCategory.UNRESPONSIVE, HostCategory.UNREACHABLE)
    failure = None
    if failed:
        failure = FailureKind.DURATION_TIMEOUT if category is HostCategory.UNRESPONSIVE else FailureKind.TCP_RESET
    return ProbeOutcome(
        endpoint=ep, category=category,
        similarity=None if failed else (1.0 if working else 0.1),
        anonymity=anonymity if working else None,
        client_sent_headers=[("Host", "bait"), ("Accept", "*/*")],
        client_recv_headers=[("Content-Length", "1024")],
        origin_recv_headers=[("host", "bait"), ("accept", "*/*")] if not failed else [],
        connect_ms=1, total_ms=5, probed_at=at, failure_kind=failure,
    )


def verdict(ep: ProxyEndpoint, behavior: BehaviorClass, at: int, https: bool = False) -> BehaviorVerdict:
    evidence = ()
    cert = None
    if behavior is BehaviorClass.SUSPICIOUS:
        evidence = (ManipulationEvidence(ep, "/index.html", EvidenceKind.ALTERED, b"<script>x</script>", "html",
                                         at, 10, 0),)
    if https:
        cert = CertVerdict(True, "ab" * 32, "CN=bait", "CN=bait", True, 1, {})
    complete = behavior is not BehaviorClass.UNRATED
    return BehaviorVerdict(
        endpoint=ep, behavior=behavior, evidence=evidence, cert=cert,
        synthetic_plt_ms=100 if complete else None, objects_fetched=6 if complete else 2, objects_expected=6,
        audited_at=at, https_supported=https,
    )


def perf(ep: ProxyEndpoint, pdt, at: int, failed: bool = False) -> PerfSample:
    return PerfSample(ep, "http://site.test/", "http", None if failed else pdt, 0.0 if failed else 1.0, 100, at,
                      failed, "duration-timeout" if failed else None)


def usage(**kw) -> UsageReport:
    base = dict(download_start=1_000, download_end=2_000, plt_ms=900, http_requests=3, https_requests=1,
                http_bytes=100, https_bytes=0, nav_error=None, geo_localized=None, proxy_country="US",
                anonymity_used=AnonymityLevel.ELITE)
    base.update(kw)
    return UsageReport(**base)
