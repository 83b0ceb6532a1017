"""JSON encoding of ledger records.

Each line of the store is one object::

    {"kind": <probe|verdict|perf|usage|evidence>, "seq": <int>, "ts": <ms>, ...fields}

Byte strings are base64, dates ISO-8601, enums their lowercase values and
header lists arrays of ``[name, value]`` pairs. See README for the full
field list per kind.
"""

from __future__ import annotations

import base64
from datetime import date
from typing import Any, Optional

from ..model import (
    AnonymityLevel,
    BehaviorClass,
    BehaviorVerdict,
    CertInfo,
    CertVerdict,
    EvidenceKind,
    FailureKind,
    HostCategory,
    ManipulationEvidence,
    PerfSample,
    ProbeOutcome,
    ProxyEndpoint,
    UsageReport,
    ValidationError,
    contains_pii,
)

KINDS = ("probe", "verdict", "perf", "usage", "evidence")


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def _opt(enum_cls, value):
    return None if value is None else enum_cls(value)


def endpoint_to(ep: ProxyEndpoint) -> dict:
    d: dict[str, Any] = {"ip": ep.ip, "port": ep.port}
    if ep.last_seen is not None:
        d["last_seen"] = ep.last_seen.isoformat()
    return d


def endpoint_from(d: dict) -> ProxyEndpoint:
    seen = d.get("last_seen")
    return ProxyEndpoint(d["ip"], int(d["port"]), date.fromisoformat(seen) if seen else None)


def _headers_to(h) -> list:
    return [[n, v] for n, v in h]


def _headers_from(h) -> list:
    return [(str(n), str(v)) for n, v in h]


def evidence_to(ev: ManipulationEvidence) -> dict:
    return {
        "endpoint": endpoint_to(ev.endpoint),
        "object_path": ev.object_path,
        "evidence_kind": ev.kind.value,
        "payload": _b64(ev.payload),
        "content_class": ev.content_class,
        "observed_at": ev.observed_at,
        "offset": ev.offset,
        "removed_len": ev.removed_len,
    }


def evidence_from(d: dict) -> ManipulationEvidence:
    return ManipulationEvidence(
        endpoint_from(d["endpoint"]), d["object_path"], EvidenceKind(d["evidence_kind"]), _unb64(d["payload"]),
        d["content_class"], int(d["observed_at"]), d.get("offset"), d.get("removed_len"),
    )


def _cert_info_to(c: CertInfo) -> dict:
    return {"fingerprint": c.fingerprint, "subject": c.subject, "issuer": c.issuer,
            "self_signed": c.self_signed, "chain_length": c.chain_length}


def cert_to(c: Optional[CertVerdict]) -> Optional[dict]:
    if c is None:
        return None
    return {
        "matched": c.matched,
        "presented_leaf_fingerprint": c.presented_leaf_fingerprint,
        "presented_subject": c.presented_subject,
        "presented_issuer": c.presented_issuer,
        "self_signed": c.self_signed,
        "chain_length": c.chain_length,
        "reference_certs": {k: _cert_info_to(v) for k, v in sorted(c.reference_certs.items())},
    }


def cert_from(d: Optional[dict]) -> Optional[CertVerdict]:
    if d is None:
        return None
    refs = {k: CertInfo(**v) for k, v in d.get("reference_certs", {}).items()}
    return CertVerdict(d["matched"], d["presented_leaf_fingerprint"], d["presented_subject"],
                       d["presented_issuer"], d["self_signed"], int(d["chain_length"]), refs)


def encode(record) -> tuple[str, int, dict]:
    """(kind, ts, fields) for a typed record."""
    if isinstance(record, ProbeOutcome):
        return "probe", record.probed_at, {
            "endpoint": endpoint_to(record.endpoint),
            "category": record.category.value,
            "similarity": record.similarity,
            "anonymity": record.anonymity.value if record.anonymity else None,
            "client_sent_headers": _headers_to(record.client_sent_headers),
            "client_recv_headers": _headers_to(record.client_recv_headers),
            "origin_recv_headers": _headers_to(record.origin_recv_headers),
            "connect_ms": record.connect_ms,
            "total_ms": record.total_ms,
            "probed_at": record.probed_at,
            "failure_kind": record.failure_kind.value if record.failure_kind else None,
        }
    if isinstance(record, BehaviorVerdict):
        return "verdict", record.audited_at, {
            "endpoint": endpoint_to(record.endpoint),
            "behavior": record.behavior.value,
            "evidence": [evidence_to(e) for e in record.evidence],
            "cert": cert_to(record.cert),
            "synthetic_plt_ms": record.synthetic_plt_ms,
            "objects_fetched": record.objects_fetched,
            "objects_expected": record.objects_expected,
            "audited_at": record.audited_at,
            "https_supported": record.https_supported,
        }
    if isinstance(record, PerfSample):
        return "perf", record.sampled_at, {
            "endpoint": endpoint_to(record.endpoint),
            "target_url": record.target_url,
            "scheme": record.scheme,
            "pdt_ms": record.pdt_ms,
            "similarity": record.similarity,
            "bytes": record.bytes,
            "sampled_at": record.sampled_at,
            "failed": record.failed,
            "failure": record.failure,
            "vantage_id": record.vantage_id,
        }
    if isinstance(record, UsageReport):
        return "usage", record.download_end, usage_to(record)
    if isinstance(record, ManipulationEvidence):
        return "evidence", record.observed_at, evidence_to(record)
    raise TypeError(f"not a ledger record: {type(record).__name__}")


USAGE_FIELDS = ("download_start", "download_end", "plt_ms", "http_requests", "https_requests", "http_bytes",
                "https_bytes", "nav_error", "geo_localized", "proxy_country", "anonymity_used")


def usage_to(r: UsageReport) -> dict:
    d = {name: getattr(r, name) for name in USAGE_FIELDS}
    d["anonymity_used"] = r.anonymity_used.value
    return d


def usage_from(d: dict) -> UsageReport:
    """Build a UsageReport from untrusted input; raises ValidationError."""
    if not isinstance(d, dict):
        raise ValidationError("invalid", "usage report must be an object")
    # PII wins over every other complaint, wherever it appears
    for key, value in d.items():
        if (isinstance(value, str) and contains_pii(value)) or contains_pii(str(key)):
            raise ValidationError("pii", f"field {key!r} carries an address or URL")
    unknown = set(d) - set(USAGE_FIELDS)
    if unknown:
        raise ValidationError("invalid", f"unknown field(s): {', '.join(sorted(unknown))}")
    missing = [n for n in USAGE_FIELDS if n not in d and n not in ("plt_ms", "nav_error", "geo_localized")]
    if missing:
        raise ValidationError("invalid", f"missing field(s): {', '.join(missing)}")
    try:
        anonymity = AnonymityLevel(d["anonymity_used"])
    except (ValueError, TypeError):
        raise ValidationError("invalid", "anonymity_used must be transparent, anonymous or elite") from None
    nav = d.get("nav_error")
    if nav is not None and not isinstance(nav, str):
        raise ValidationError("invalid", "nav_error must be a string")
    return UsageReport(
        download_start=d["download_start"], download_end=d["download_end"], plt_ms=d.get("plt_ms"),
        http_requests=d["http_requests"], https_requests=d["https_requests"], http_bytes=d["http_bytes"],
        https_bytes=d["https_bytes"], nav_error=nav, geo_localized=d.get("geo_localized"),
        proxy_country=d["proxy_country"], anonymity_used=anonymity,
    )


def decode(obj: dict):
    """Typed record from a decoded JSON line (``kind``/``seq``/``ts`` ignored)."""
    kind = obj.get("kind")
    if kind == "probe":
        return ProbeOutcome(
            endpoint=endpoint_from(obj["endpoint"]),
            category=HostCategory(obj["category"]),
            similarity=obj["similarity"],
            anonymity=_opt(AnonymityLevel, obj["anonymity"]),
            client_sent_headers=_headers_from(obj["client_sent_headers"]),
            client_recv_headers=_headers_from(obj["client_recv_headers"]),
            origin_recv_headers=_headers_from(obj["origin_recv_headers"]),
            connect_ms=obj["connect_ms"],
            total_ms=obj["total_ms"],
            probed_at=obj["probed_at"],
            failure_kind=_opt(FailureKind, obj["failure_kind"]),
        )
    if kind == "verdict":
        return BehaviorVerdict(
            endpoint=endpoint_from(obj["endpoint"]),
            behavior=BehaviorClass(obj["behavior"]),
            evidence=tuple(evidence_from(e) for e in obj["evidence"]),
            cert=cert_from(obj["cert"]),
            synthetic_plt_ms=obj["synthetic_plt_ms"],
            objects_fetched=obj["objects_fetched"],
            objects_expected=obj["objects_expected"],
            audited_at=obj["audited_at"],
            https_supported=obj.get("https_supported", False),
        )
    if kind == "perf":
        return PerfSample(
            endpoint_from(obj["endpoint"]), obj["target_url"], obj["scheme"], obj["pdt_ms"], obj["similarity"],
            obj["bytes"], obj["sampled_at"], obj["failed"], obj.get("failure"), obj.get("vantage_id", "local"),
        )
    if kind == "usage":
        return usage_from({k: v for k, v in obj.items() if k in USAGE_FIELDS})
    if kind == "evidence":
        return evidence_from(obj)
    raise ValidationError("invalid", f"unknown record kind {kind!r}")
