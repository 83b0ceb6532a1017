"""Header diffing between a baseline and an observed header list."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from ..model import DeltaKind, HeaderDelta, ProxyEndpoint, canonical_headers

WATCHLIST_EXACT = frozenset({"set-cookie", "x-adblock-key"})
WATCHLIST_PREFIXES = ("access-control-allow-",)


def is_watchlisted(name: str) -> bool:
    return name in WATCHLIST_EXACT or name.startswith(WATCHLIST_PREFIXES)


def _grouped(headers: Sequence[tuple[str, str]]) -> dict[str, list[str]]:
    out: dict[str, list[str]] = defaultdict(list)
    for name, value in canonical_headers(headers):
        out[name].append(value)
    return out


def header_diff(direction: str, baseline: Sequence[tuple[str, str]], observed: Sequence[tuple[str, str]]) -> list[HeaderDelta]:
    """Added/removed/modified headers, one delta per header name, sorted by name."""
    base = _grouped(baseline)
    seen = _grouped(observed)
    deltas = []
    for name in sorted(set(base) | set(seen)):
        b = base.get(name)
        o = seen.get(name)
        if b is None:
            deltas.append(HeaderDelta(direction, name, DeltaKind.ADDED, None, ", ".join(o)))
        elif o is None:
            deltas.append(HeaderDelta(direction, name, DeltaKind.REMOVED, ", ".join(b), None))
        elif b != o:
            bj, oj = ", ".join(b), ", ".join(o)
            # list-combined forms that read identically are equivalent field values
            if bj != oj:
                deltas.append(HeaderDelta(direction, name, DeltaKind.MODIFIED, bj, oj))
    return deltas


@dataclass
class HeaderStats:
    probed: int
    # (direction, name, kind) -> fraction of probed endpoints showing it
    table: dict[tuple[str, str, str], float] = field(default_factory=dict)
    watchlist: dict[tuple[str, str, str], float] = field(default_factory=dict)

    def top(self, k: int = 10, direction: Optional[str] = None) -> list[tuple[tuple[str, str, str], float]]:
        rows = [(key, frac) for key, frac in self.table.items() if direction is None or key[0] == direction]
        rows.sort(key=lambda kv: (-kv[1], kv[0]))
        return rows[:k]


def aggregate_header_stats(
    deltas: Iterable[tuple[ProxyEndpoint, HeaderDelta]],
    probed: Iterable[ProxyEndpoint],
) -> HeaderStats:
    """Fraction of distinct probed endpoints exhibiting each delta at least once."""
    probed_keys = {ep.key for ep in probed}
    exhibitors: dict[tuple[str, str, str], set] = defaultdict(set)
    for ep, d in deltas:
        probed_keys.add(ep.key)
        exhibitors[(d.direction, d.name, d.kind.value)].add(ep.key)
    total = len(probed_keys)
    stats = HeaderStats(probed=total)
    for key, eps in exhibitors.items():
        frac = len(eps) / total
        stats.table[key] = frac
        if is_watchlisted(key[1]):
            stats.watchlist[key] = frac
    return stats
