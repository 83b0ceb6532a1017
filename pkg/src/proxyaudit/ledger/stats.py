"""Per-proxy temporal statistics rebuilt from the record stream."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Optional

from ..model import (
    AnonymityLevel,
    BehaviorClass,
    BehaviorVerdict,
    HostCategory,
    PerfSample,
    ProbeOutcome,
    ProxyEndpoint,
    day_of,
)
from .geo import UNKNOWN, GeoTable

RECENT_PDT_WINDOW_MS = 24 * 3600 * 1000


def lifetime_uptime(active_days: Iterable[date]) -> tuple[int, int]:
    """(inclusive day span first..last, number of distinct active days)."""
    days = set(active_days)
    if not days:
        raise ValueError("lifetime of a proxy that was never active is undefined")
    return (max(days) - min(days)).days + 1, len(days)


@dataclass
class ProxyStats:
    endpoint: ProxyEndpoint
    first_active: date
    last_active: date
    active_days: frozenset
    lifetime_days: int
    uptime_days: int
    ever_suspicious: bool
    country: str
    asn: int
    https_support: bool
    recent_median_pdt_ms: Optional[int]
    # not part of the published table, used by selection
    latest_behavior: Optional[BehaviorClass] = None
    latest_verdict_ms: int = 0
    anonymity: Optional[AnonymityLevel] = None
    as_name: str = "unknown"

    def __post_init__(self) -> None:
        if self.uptime_days != len(self.active_days) or self.uptime_days > self.lifetime_days:
            raise ValueError(f"{self.endpoint}: inconsistent lifetime/uptime")


CSV_COLUMNS = ("endpoint", "first_active", "last_active", "lifetime_days", "uptime_days", "ever_suspicious",
               "country", "asn", "https_support", "recent_median_pdt_ms", "active_days")


@dataclass
class _Acc:
    days: set = field(default_factory=set)
    suspicious: bool = False
    https: bool = False
    latest: Optional[BehaviorVerdict] = None
    anonymity: Optional[AnonymityLevel] = None
    anonymity_at: int = -1
    pdts: list = field(default_factory=list)


def compute_stats(records: Iterable, geo: Optional[GeoTable] = None, as_of_ms: Optional[int] = None) -> list[ProxyStats]:
    """ProxyStats for every endpoint with at least one behavior verdict.

    A proxy is active on a day when it answered a behavior audit that day.
    ``recent_median_pdt_ms`` uses successful samples in the 24 h before
    ``as_of_ms`` (default: the newest record timestamp), so a replay of the
    same records always gives the same table.
    """
    acc: dict[tuple[str, int], _Acc] = {}
    endpoints: dict[tuple[str, int], ProxyEndpoint] = {}
    perf: list[PerfSample] = []
    newest = 0
    for rec in records:
        if isinstance(rec, BehaviorVerdict):
            a = acc.setdefault(rec.endpoint.key, _Acc())
            endpoints.setdefault(rec.endpoint.key, rec.endpoint)
            a.days.add(day_of(rec.audited_at))
            a.suspicious |= rec.behavior is BehaviorClass.SUSPICIOUS
            a.https |= rec.https_supported
            if a.latest is None or rec.audited_at >= a.latest.audited_at:
                a.latest = rec
            newest = max(newest, rec.audited_at)
        elif isinstance(rec, ProbeOutcome):
            newest = max(newest, rec.probed_at)
            if rec.category is HostCategory.WORKING and rec.anonymity is not None:
                a = acc.setdefault(rec.endpoint.key, _Acc())
                if rec.probed_at >= a.anonymity_at:
                    a.anonymity, a.anonymity_at = rec.anonymity, rec.probed_at
        elif isinstance(rec, PerfSample):
            newest = max(newest, rec.sampled_at)
            perf.append(rec)
    as_of = newest if as_of_ms is None else as_of_ms
    for s in perf:
        a = acc.get(s.endpoint.key)
        if a is not None and not s.failed and s.pdt_ms is not None and as_of - RECENT_PDT_WINDOW_MS <= s.sampled_at <= as_of:
            a.pdts.append(s.pdt_ms)

    out = []
    for key, a in acc.items():
        if not a.days:
            continue
        ep = endpoints[key]
        info = geo.lookup(ep.ip) if geo is not None else UNKNOWN
        lifetime, uptime = lifetime_uptime(a.days)
        median = int(round(statistics.median(a.pdts))) if a.pdts else None
        out.append(ProxyStats(
            endpoint=ProxyEndpoint(ep.ip, ep.port), first_active=min(a.days), last_active=max(a.days),
            active_days=frozenset(a.days), lifetime_days=lifetime, uptime_days=uptime,
            ever_suspicious=a.suspicious, country=info.country, asn=info.asn, https_support=a.https,
            recent_median_pdt_ms=median, latest_behavior=a.latest.behavior, latest_verdict_ms=a.latest.audited_at,
            anonymity=a.anonymity, as_name=info.as_name,
        ))
    out.sort(key=lambda s: s.endpoint.sort_key())
    return out


def stats_csv(stats: Iterable[ProxyStats]) -> str:
    """Deterministic CSV rendering (rows by endpoint, days sorted)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in sorted(stats, key=lambda s: s.endpoint.sort_key()):
        w.writerow([
            str(s.endpoint), s.first_active.isoformat(), s.last_active.isoformat(), s.lifetime_days, s.uptime_days,
            int(s.ever_suspicious), s.country, s.asn, int(s.https_support),
            "" if s.recent_median_pdt_ms is None else s.recent_median_pdt_ms,
            " ".join(d.isoformat() for d in sorted(s.active_days)),
        ])
    return buf.getvalue()
