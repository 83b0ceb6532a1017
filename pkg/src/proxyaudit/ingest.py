"""Candidate proxy lists: parsing, pluggable sources, and ordered merging."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Optional

from .model import ProxyEndpoint, ValidationError

log = logging.getLogger(__name__)

_LINE = re.compile(r"^\s*(\d{1,3}(?:\.\d{1,3}){3})\s*[:,]\s*(\d{1,5})\s*$")


@dataclass
class ParseResult:
    endpoints: list[ProxyEndpoint] = field(default_factory=list)
    malformed: int = 0

    def __iter__(self):
        return iter(self.endpoints)

    def __len__(self) -> int:
        return len(self.endpoints)


def parse_candidate_list(raw: bytes, source_id: str, as_of: date) -> ParseResult:
    """Parse ``ip:port`` / ``ip,port`` lines; malformed lines are counted, not fatal."""
    result = ParseResult()
    for lineno, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _LINE.match(stripped)
        try:
            if m is None:
                raise ValidationError("invalid", "unrecognised line")
            result.endpoints.append(ProxyEndpoint(m.group(1), int(m.group(2)), as_of))
        except ValidationError:
            result.malformed += 1
            log.debug("%s:%d: skipping malformed candidate %r", source_id, lineno, stripped)
    if result.malformed:
        log.info("%s: %d malformed line(s) skipped", source_id, result.malformed)
    return result


def ordering_key(ep: ProxyEndpoint):
    # latest sighting first, then endpoint ascending (numeric IP, then port)
    return (-(ep.last_seen.toordinal() if ep.last_seen else 0), ep.sort_key())


def merge_candidates(existing: Iterable[ProxyEndpoint], incoming: Iterable[ProxyEndpoint]) -> list[ProxyEndpoint]:
    """Union by (ip, port) keeping the latest ``last_seen``, newest first."""
    merged: dict[tuple[str, int], ProxyEndpoint] = {}
    for ep in list(existing) + list(incoming):
        cur = merged.get(ep.key)
        if cur is None or (ep.last_seen or date.min) > (cur.last_seen or date.min):
            merged[ep.key] = ep
    return sorted(merged.values(), key=ordering_key)


@dataclass(frozen=True)
class CandidateSource:
    source_id: str
    kind: str  # "file" | "fetcher-adapter"
    uri: str


Fetcher = Callable[[str], bytes]

_ADAPTERS: dict[str, Fetcher] = {}


def register_fetcher(name: str, fetcher: Fetcher) -> None:
    """Plug in a crawler for aggregator sites; it maps a URI to raw list bytes."""
    _ADAPTERS[name] = fetcher


def read_source(source: CandidateSource, adapter: Optional[str] = None) -> bytes:
    if source.kind == "file":
        return Path(source.uri).read_bytes()
    if source.kind == "fetcher-adapter":
        fetcher = _ADAPTERS.get(adapter or source.source_id)
        if fetcher is None:
            raise LookupError(f"no fetcher adapter registered for {source.source_id!r}")
        return fetcher(source.uri)
    raise ValueError(f"unknown source kind {source.kind!r}")


def ingest_sources(sources: Iterable[CandidateSource], as_of: date,
                   existing: Iterable[ProxyEndpoint] = ()) -> tuple[list[ProxyEndpoint], int]:
    seen_ids: set[str] = set()
    merged = list(existing)
    malformed = 0
    for src in sources:
        if src.source_id in seen_ids:
            raise ValueError(f"duplicate source id {src.source_id!r}")
        seen_ids.add(src.source_id)
        parsed = parse_candidate_list(read_source(src), src.source_id, as_of)
        malformed += parsed.malformed
        merged = merge_candidates(merged, parsed.endpoints)
    return merged, malformed


def write_potential_list(path: Path, endpoints: Iterable[ProxyEndpoint]) -> None:
    """Persist the ordered list as ``ip:port,YYYY-MM-DD`` lines."""
    lines = [f"{ep.ip}:{ep.port},{ep.last_seen.isoformat() if ep.last_seen else ''}" for ep in endpoints]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_potential_list(path: Path) -> list[ProxyEndpoint]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        addr, _, seen = line.strip().partition(",")
        ep = ProxyEndpoint.parse(addr)
        if seen:
            ep = ep.seen(date.fromisoformat(seen))
        out.append(ep)
    return out
