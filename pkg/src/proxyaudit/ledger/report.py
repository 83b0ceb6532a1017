"""Windowed reports: day series, geo rollups, stability and performance."""

from __future__ import annotations

import csv
import io
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Optional

from ..analysis.headers import HeaderStats, aggregate_header_stats, header_diff
from ..bait.origin import response_baseline
from ..bait.site import OBJECT_1KB, expected_content
from ..model import (
    BehaviorClass,
    BehaviorVerdict,
    HostCategory,
    PerfSample,
    ProbeOutcome,
    day_of,
)
from .geo import UNKNOWN, GeoTable
from .stats import ProxyStats, compute_stats, stats_csv

CATEGORIES = [c.value for c in HostCategory]
BEHAVIORS = [b.value for b in BehaviorClass]


def probe_day_counts(probes: Iterable[ProbeOutcome]) -> dict[date, Counter]:
    """Distinct endpoints per (day, category); an endpoint probed twice in a day counts under its last outcome."""
    last: dict[tuple[date, tuple], ProbeOutcome] = {}
    for p in probes:
        k = (day_of(p.probed_at), p.endpoint.key)
        if k not in last or p.probed_at >= last[k].probed_at:
            last[k] = p
    out: dict[date, Counter] = defaultdict(Counter)
    for (day, _), p in last.items():
        out[day][p.category.value] += 1
    return out


def day_behavior(verdicts: Iterable[BehaviorVerdict]) -> dict[tuple[date, tuple], str]:
    """Per (day, endpoint): suspicious if any verdict that day was, else trusted if any was, else unrated."""
    rank = {BehaviorClass.SUSPICIOUS: 2, BehaviorClass.TRUSTED: 1, BehaviorClass.UNRATED: 0}
    best: dict[tuple[date, tuple], BehaviorClass] = {}
    for v in verdicts:
        k = (day_of(v.audited_at), v.endpoint.key)
        if k not in best or rank[v.behavior] > rank[best[k]]:
            best[k] = v.behavior
    return {k: b.value for k, b in best.items()}


def cdf_points(values: Iterable[int]) -> list[tuple[int, float]]:
    vals = sorted(values)
    n = len(vals)
    pts = []
    for i, v in enumerate(vals, 1):
        if i == n or vals[i] != v:
            pts.append((v, i / n))
    return pts


def _mean_median(xs: list[int]) -> tuple[Optional[float], Optional[float]]:
    if not xs:
        return None, None
    return statistics.fmean(xs), float(statistics.median(xs))


@dataclass
class Report:
    start: Optional[date]
    end: Optional[date]
    probe_series: list[tuple[date, dict]] = field(default_factory=list)
    behavior_series: list[tuple[date, dict]] = field(default_factory=list)
    probed: int = 0
    working: int = 0
    audited: int = 0
    suspicious: int = 0
    countries: list[tuple[str, int, int]] = field(default_factory=list)
    asns: list[tuple[int, str, int, int]] = field(default_factory=list)
    lifetime_cdf: list[tuple[int, float]] = field(default_factory=list)
    uptime_cdf: list[tuple[int, float]] = field(default_factory=list)
    stats: list[ProxyStats] = field(default_factory=list)
    pdt: dict[str, tuple[int, Optional[float], Optional[float]]] = field(default_factory=dict)
    headers: Optional[HeaderStats] = None

    @property
    def suspicious_fraction(self) -> float:
        """Share of audited endpoints found suspicious at least once in the window."""
        return self.suspicious / self.audited if self.audited else 0.0

    def text(self) -> str:
        span = f"{self.start} .. {self.end}" if self.start else "(empty)"
        lines = [
            f"window            {span}",
            f"probed endpoints  {self.probed}",
            f"working           {self.working}",
            f"audited (active)  {self.audited}",
            f"suspicious        {self.suspicious}",
            f"suspicious fraction {self.suspicious_fraction:.2f}",
        ]
        if self.probe_series:
            lines.append("")
            lines.append("day         " + " ".join(f"{c:>12}" for c in CATEGORIES))
            for day, counts in self.probe_series:
                lines.append(f"{day}  " + " ".join(f"{counts[c]:>12}" for c in CATEGORIES))
        if self.behavior_series:
            lines.append("")
            lines.append("day         " + " ".join(f"{c:>10}" for c in ["active"] + BEHAVIORS))
            for day, counts in self.behavior_series:
                lines.append(f"{day}  " + " ".join(f"{counts[c]:>10}" for c in ["active"] + BEHAVIORS))
        if self.countries:
            lines.append("")
            lines.append("top countries (working, suspicious)")
            for cc, n, s in self.countries:
                lines.append(f"  {cc}  {n:>6} {s:>6}")
        if self.pdt:
            lines.append("")
            for label, (n, mean, median) in sorted(self.pdt.items()):
                if n:
                    lines.append(f"pdt {label:<10} n={n} mean={mean:.0f}ms median={median:.0f}ms")
                else:
                    lines.append(f"pdt {label:<10} n=0")
        if self.headers and self.headers.table:
            lines.append("")
            lines.append("most common header changes")
            for (direction, name, kind), frac in self.headers.top(10):
                lines.append(f"  {direction:<8} {kind:<8} {name:<28} {frac:.3f}")
        return "\n".join(lines) + "\n"

    def csv_files(self) -> dict[str, str]:
        def render(header, rows):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
            return buf.getvalue()

        return {
            "categories_by_day.csv": render(["day"] + CATEGORIES,
                                            [[d.isoformat()] + [c[k] for k in CATEGORIES] for d, c in self.probe_series]),
            "behavior_by_day.csv": render(["day", "active"] + BEHAVIORS,
                                          [[d.isoformat(), c["active"]] + [c[k] for k in BEHAVIORS]
                                           for d, c in self.behavior_series]),
            "countries.csv": render(["country", "working", "suspicious"], self.countries),
            "asns.csv": render(["asn", "as_name", "working", "suspicious"], self.asns),
            "lifetime_cdf.csv": render(["lifetime_days", "fraction"], self.lifetime_cdf),
            "uptime_cdf.csv": render(["uptime_days", "fraction"], self.uptime_cdf),
            "proxy_stats.csv": stats_csv(self.stats),
            "pdt.csv": render(["group", "samples", "mean_ms", "median_ms"],
                              [[k, n, "" if m is None else f"{m:.1f}", "" if md is None else f"{md:.1f}"]
                               for k, (n, m, md) in sorted(self.pdt.items())]),
        }

    def write(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, body in self.csv_files().items():
            p = directory / name
            p.write_text(body)
            written.append(p)
        p = directory / "summary.txt"
        p.write_text(self.text())
        written.append(p)
        return written


def _record_day(rec) -> Optional[date]:
    for attr in ("probed_at", "audited_at", "sampled_at"):
        ts = getattr(rec, attr, None)
        if ts is not None:
            return day_of(ts)
    return None


def build_report(records: Iterable, start: Optional[date] = None, end: Optional[date] = None,
                 geo: Optional[GeoTable] = None, top_k: int = 20) -> Report:
    """Aggregate every probe, verdict and perf record whose day falls in [start, end].

    Missing bounds default to the first/last record day. A window with no
    records yields zero-filled day series (or none if the window is open).
    """
    records = list(records)
    days = [d for d in (_record_day(r) for r in records) if d is not None]
    if start is None and days:
        start = min(days)
    if end is None and days:
        end = max(days)
    if start is not None and end is not None and end < start:
        raise ValueError("report window ends before it starts")
    in_window = [r for r in records
                 if (d := _record_day(r)) is not None and start is not None and end is not None and start <= d <= end]
    probes = [r for r in in_window if isinstance(r, ProbeOutcome)]
    verdicts = [r for r in in_window if isinstance(r, BehaviorVerdict)]
    perf = [r for r in in_window if isinstance(r, PerfSample)]

    rep = Report(start, end)
    if start is None or end is None:
        return rep

    pc = probe_day_counts(probes)
    db = day_behavior(verdicts)
    bc: dict[date, Counter] = defaultdict(Counter)
    for (day, _), b in db.items():
        bc[day][b] += 1
        bc[day]["active"] += 1
    day = start
    while day <= end:
        rep.probe_series.append((day, {c: pc[day][c] if day in pc else 0 for c in CATEGORIES}))
        rep.behavior_series.append((day, {c: bc[day][c] if day in bc else 0 for c in ["active"] + BEHAVIORS}))
        day += timedelta(days=1)

    rep.probed = len({p.endpoint.key for p in probes})
    working = {p.endpoint.key: p.endpoint for p in probes if p.category is HostCategory.WORKING}
    rep.working = len(working)
    audited = {v.endpoint.key for v in verdicts}
    suspicious = {v.endpoint.key for v in verdicts if v.behavior is BehaviorClass.SUSPICIOUS}
    rep.audited, rep.suspicious = len(audited), len(suspicious)

    cc: Counter = Counter()
    cs: Counter = Counter()
    an: Counter = Counter()
    asus: Counter = Counter()
    names: dict[int, str] = {}
    for key, ep in working.items():
        info = geo.lookup(ep.ip) if geo is not None else UNKNOWN
        cc[info.country] += 1
        an[info.asn] += 1
        names[info.asn] = info.as_name
        if key in suspicious:
            cs[info.country] += 1
            asus[info.asn] += 1
    rep.countries = [(c, n, cs[c]) for c, n in sorted(cc.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]]
    rep.asns = [(a, names[a], n, asus[a]) for a, n in sorted(an.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]]

    rep.stats = compute_stats(verdicts + probes + perf, geo)
    rep.lifetime_cdf = cdf_points(s.lifetime_days for s in rep.stats)
    rep.uptime_cdf = cdf_points(s.uptime_days for s in rep.stats)

    ever = {s.endpoint.key for s in rep.stats if s.ever_suspicious}
    groups: dict[str, list[int]] = {"trusted": [], "suspicious": []}
    for s in perf:
        if s.failed or s.pdt_ms is None or s.endpoint.key not in audited:
            continue
        groups["suspicious" if s.endpoint.key in ever else "trusted"].append(s.pdt_ms)
    rep.pdt = {k: (len(v),) + _mean_median(v) for k, v in groups.items()}

    rep.headers = probe_header_stats(probes)
    return rep


def probe_header_stats(probes: Iterable[ProbeOutcome]) -> HeaderStats:
    """Request and response header changes seen on Working probes."""
    body, ctype = expected_content(OBJECT_1KB)
    baseline = response_baseline(ctype, len(body))
    deltas = []
    probed = []
    for p in probes:
        if p.category is not HostCategory.WORKING:
            continue
        probed.append(p.endpoint)
        for d in header_diff("request", p.client_sent_headers, p.origin_recv_headers):
            deltas.append((p.endpoint, d))
        for d in header_diff("response", baseline, p.client_recv_headers):
            deltas.append((p.endpoint, d))
    return aggregate_header_stats(deltas, probed)
