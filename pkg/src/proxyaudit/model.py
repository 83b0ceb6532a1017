"""Domain types shared by every stage of the audit funnel.

All records are frozen dataclasses. Timestamps are integer milliseconds
since the Unix epoch (UTC); calendar days are ``datetime.date`` in UTC.
"""

from __future__ import annotations

import enum
import ipaddress
import re
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Optional, Sequence

Headers = list[tuple[str, str]]


class ValidationError(ValueError):
    """A record violates its type invariants.

    ``reason`` is a short machine-readable code (``pii``, ``invalid``, ...).
    """

    def __init__(self, reason: str, message: str = "") -> None:
        super().__init__(f"{reason}: {message}" if message else reason)
        self.reason = reason


class HostCategory(str, enum.Enum):
    UNRESPONSIVE = "unresponsive"
    UNREACHABLE = "unreachable"
    WORKING = "working"
    OTHER = "other"


class AnonymityLevel(str, enum.Enum):
    TRANSPARENT = "transparent"
    ANONYMOUS = "anonymous"
    ELITE = "elite"


class BehaviorClass(str, enum.Enum):
    TRUSTED = "trusted"
    SUSPICIOUS = "suspicious"
    UNRATED = "unrated"


class FailureKind(str, enum.Enum):
    CONNECT_TIMEOUT = "connect-timeout"
    DURATION_TIMEOUT = "duration-timeout"
    TCP_RESET = "tcp-reset"
    ICMP_UNREACHABLE = "icmp-unreachable"

    @property
    def is_timeout(self) -> bool:
        return self in (FailureKind.CONNECT_TIMEOUT, FailureKind.DURATION_TIMEOUT)


class DeltaKind(str, enum.Enum):
    ADDED = "added"
    REMOVED = "removed"
    MODIFIED = "modified"


class EvidenceKind(str, enum.Enum):
    ALTERED = "altered"
    INJECTED = "injected"


def now_ms() -> int:
    return int(time.time() * 1000)


def day_of(ts_ms: int) -> date:
    """UTC calendar day of a millisecond timestamp."""
    return datetime.fromtimestamp(ts_ms / 1000, tz=timezone.utc).date()


def day_start_ms(day: date) -> int:
    return int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp() * 1000)


def utc_today() -> date:
    return datetime.now(timezone.utc).date()


_WS = re.compile(r"\s+")


def canonical_header(name: str, value: str) -> tuple[str, str]:
    """Lowercase the name and collapse whitespace runs in the value."""
    return name.strip().lower(), _WS.sub(" ", value).strip()


def canonical_headers(headers: Sequence[tuple[str, str]]) -> Headers:
    return [canonical_header(n, v) for n, v in headers]


@dataclass(frozen=True, order=True)
class ProxyEndpoint:
    ip: str
    port: int
    last_seen: Optional[date] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        try:
            addr = ipaddress.IPv4Address(self.ip)
        except ValueError:
            raise ValidationError("invalid", f"not a dotted-quad IPv4 address: {self.ip!r}") from None
        if str(addr) != self.ip:
            raise ValidationError("invalid", f"non-canonical IPv4 address: {self.ip!r}")
        if not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise ValidationError("invalid", f"port out of range: {self.port!r}")
        if self.last_seen is not None and self.last_seen > utc_today():
            raise ValidationError("invalid", f"last_seen in the future: {self.last_seen}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.ip, self.port)

    def sort_key(self) -> tuple[int, int]:
        return (int(ipaddress.IPv4Address(self.ip)), self.port)

    def seen(self, day: date) -> "ProxyEndpoint":
        return ProxyEndpoint(self.ip, self.port, day)

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "ProxyEndpoint":
        ip, _, port = text.strip().rpartition(":")
        return cls(ip, int(port))


@dataclass(frozen=True)
class HeaderDelta:
    direction: str  # "request" | "response"
    name: str
    kind: DeltaKind
    baseline_value: Optional[str] = None
    observed_value: Optional[str] = None

    def __post_init__(self) -> None:
        if self.direction not in ("request", "response"):
            raise ValidationError("invalid", f"bad direction {self.direction!r}")
        has_b = self.baseline_value is not None
        has_o = self.observed_value is not None
        ok = {
            DeltaKind.ADDED: not has_b and has_o,
            DeltaKind.REMOVED: has_b and not has_o,
            DeltaKind.MODIFIED: has_b and has_o and self.baseline_value != self.observed_value,
        }[self.kind]
        if not ok:
            raise ValidationError("invalid", f"inconsistent {self.kind.value} delta for {self.name}")


INJECTED_PATH = "(injected)"


@dataclass(frozen=True)
class ManipulationEvidence:
    """One altered or injected object seen through a proxy.

    For ``ALTERED`` evidence the received bytes equal
    ``expected[:offset] + payload + expected[offset + removed_len:]``.
    """

    endpoint: ProxyEndpoint
    object_path: str
    kind: EvidenceKind
    payload: bytes
    content_class: str
    observed_at: int
    offset: Optional[int] = None
    removed_len: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.payload:
            raise ValidationError("invalid", "evidence payload is empty")
        if self.content_class not in ("html", "script", "image", "other"):
            raise ValidationError("invalid", f"bad content class {self.content_class!r}")
        if self.kind is EvidenceKind.ALTERED and (self.offset is None or self.removed_len is None):
            raise ValidationError("invalid", "altered evidence needs offset and removed_len")

    def replay(self, expected: bytes) -> bytes:
        """Reconstruct the received object from the expected bytes."""
        if self.kind is not EvidenceKind.ALTERED:
            raise ValueError("only altered evidence can be replayed")
        assert self.offset is not None and self.removed_len is not None
        return expected[: self.offset] + self.payload + expected[self.offset + self.removed_len :]


@dataclass(frozen=True)
class CertInfo:
    fingerprint: str
    subject: str
    issuer: str
    self_signed: bool
    chain_length: int


@dataclass(frozen=True)
class CertVerdict:
    matched: bool
    presented_leaf_fingerprint: str
    presented_subject: str
    presented_issuer: str
    self_signed: bool
    chain_length: int
    # host label -> certificate seen through the proxy for that reference host
    reference_certs: dict[str, CertInfo] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.chain_length < 0:
            raise ValidationError("invalid", "negative chain length")


@dataclass(frozen=True)
class ProbeOutcome:
    endpoint: ProxyEndpoint
    category: HostCategory
    similarity: Optional[float]
    anonymity: Optional[AnonymityLevel]
    client_sent_headers: Headers
    client_recv_headers: Headers
    origin_recv_headers: Headers
    connect_ms: int
    total_ms: int
    probed_at: int
    failure_kind: Optional[FailureKind] = None

    def __post_init__(self) -> None:
        if self.category is HostCategory.WORKING:
            if self.similarity is None or self.similarity < 0.5 or self.anonymity is None:
                raise ValidationError("invalid", "working outcome needs similarity >= 0.5 and anonymity")
        if self.category is HostCategory.UNRESPONSIVE:
            if self.failure_kind is None or not self.failure_kind.is_timeout:
                raise ValidationError("invalid", "unresponsive outcome needs a timeout failure")
        if self.category is HostCategory.UNREACHABLE:
            if self.failure_kind not in (FailureKind.TCP_RESET, FailureKind.ICMP_UNREACHABLE):
                raise ValidationError("invalid", "unreachable outcome needs reset/icmp failure")
        if self.similarity is not None and not 0.0 <= self.similarity <= 1.0:
            raise ValidationError("invalid", "similarity outside [0, 1]")
        if self.connect_ms < 0 or self.total_ms < 0:
            raise ValidationError("invalid", "negative timing")


@dataclass(frozen=True)
class BehaviorVerdict:
    endpoint: ProxyEndpoint
    behavior: BehaviorClass
    evidence: tuple[ManipulationEvidence, ...]
    cert: Optional[CertVerdict]
    synthetic_plt_ms: Optional[int]
    objects_fetched: int
    objects_expected: int
    audited_at: int
    https_supported: bool = False

    def __post_init__(self) -> None:
        cert_bad = self.cert is not None and not self.cert.matched
        if self.behavior is BehaviorClass.TRUSTED:
            ok = not self.evidence and not cert_bad
        elif self.behavior is BehaviorClass.UNRATED:
            ok = self.objects_fetched < self.objects_expected and not self.evidence and not cert_bad
        else:
            ok = bool(self.evidence) or cert_bad
        if not ok:
            raise ValidationError("invalid", f"verdict {self.behavior.value} contradicts its evidence")


@dataclass(frozen=True)
class PerfSample:
    endpoint: ProxyEndpoint
    target_url: str
    scheme: str
    pdt_ms: Optional[int]
    similarity: float
    bytes: int
    sampled_at: int
    failed: bool
    failure: Optional[str] = None
    vantage_id: str = "local"

    def __post_init__(self) -> None:
        if self.scheme not in ("http", "https") or not self.target_url.startswith(self.scheme + "://"):
            raise ValidationError("invalid", f"scheme {self.scheme!r} does not match {self.target_url!r}")
        if self.pdt_ms is not None and self.pdt_ms < 0:
            raise ValidationError("invalid", "negative pdt")
        if self.bytes < 0 or not 0.0 <= self.similarity <= 1.0:
            raise ValidationError("invalid", "bad byte count or similarity")


_DOTTED_QUAD = re.compile(r"(?<![\d.])\d{1,3}(?:\.\d{1,3}){3}(?![\d.])")
_URL_SCHEME = re.compile(r"[A-Za-z][A-Za-z0-9+.\-]*://")
_COUNTRY = re.compile(r"^[A-Z]{2}$")


def contains_pii(text: str) -> bool:
    """True if ``text`` carries an IPv4 address or a URL."""
    return bool(_DOTTED_QUAD.search(text) or _URL_SCHEME.search(text))


@dataclass(frozen=True)
class UsageReport:
    download_start: int
    download_end: int
    plt_ms: Optional[int]
    http_requests: int
    https_requests: int
    http_bytes: int
    https_bytes: int
    nav_error: Optional[str]
    geo_localized: Optional[bool]
    proxy_country: str
    anonymity_used: AnonymityLevel

    def __post_init__(self) -> None:
        for name in ("download_start", "download_end", "http_requests", "https_requests", "http_bytes", "https_bytes"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ValidationError("invalid", f"{name} must be a non-negative integer")
        if self.plt_ms is not None and (isinstance(self.plt_ms, bool) or not isinstance(self.plt_ms, int) or self.plt_ms < 0):
            raise ValidationError("invalid", "plt_ms must be a non-negative integer")
        if self.download_end < self.download_start:
            raise ValidationError("invalid", "download_end before download_start")
        if self.geo_localized is not None and not isinstance(self.geo_localized, bool):
            raise ValidationError("invalid", "geo_localized must be boolean")
        for text in (self.nav_error, self.proxy_country):
            if text is not None and contains_pii(text):
                raise ValidationError("pii", "free-text field carries an address or URL")
        if not isinstance(self.proxy_country, str) or not _COUNTRY.match(self.proxy_country):
            raise ValidationError("invalid", f"bad country code {self.proxy_country!r}")
        if not isinstance(self.anonymity_used, AnonymityLevel):
            raise ValidationError("invalid", "anonymity_used must be an AnonymityLevel")
