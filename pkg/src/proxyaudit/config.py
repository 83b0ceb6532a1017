"""Runtime configuration: ``key = value`` file plus ``PROXYAUDIT_*`` environment overrides."""

from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional

ENV_PREFIX = "PROXYAUDIT_"

_DURATION = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ms|s|m|h|d)?\s*$")
_UNITS = {"ms": 0.001, "s": 1.0, "m": 60.0, "h": 3600.0, "d": 86400.0, None: 1.0}


class ConfigError(ValueError):
    pass


def parse_duration(text) -> float:
    """Seconds from ``250ms``, ``3s``, ``5m``, ``24h``, ``7d`` or a bare number of seconds."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _DURATION.match(str(text))
    if not m:
        raise ConfigError(f"bad duration {text!r}")
    return float(m.group(1)) * _UNITS[m.group(2)]


def _duration(default: float):
    return dataclasses.field(default=default, metadata={"duration": True})


@dataclass
class Config:
    # probing
    connect_timeout: float = _duration(3.0)
    probe_max_duration: float = _duration(30.0)
    probe_parallelism: int = 64
    probe_budget: float = _duration(24 * 3600.0)
    similarity_threshold: float = 0.5
    client_ip: str = "127.0.0.1"
    # behavior audits
    audit_max_duration: float = _duration(45.0)
    tls_max_duration: float = _duration(30.0)
    audit_parallelism: int = 32
    working_window_days: int = 7
    # performance sampling
    revisit_interval: float = _duration(300.0)
    https_ratio: float = 0.1
    perf_parallelism: int = 64
    perf_max_duration: float = _duration(30.0)
    vantage_id: str = "local"
    http_sites: str = "sites-http.txt"
    https_sites: str = "sites-https.txt"
    # bait origin, as seen by the prober
    bait_url: str = "http://127.0.0.1:8000"
    bait_tls_url: str = "https://127.0.0.1:8443/index.html"
    reference_urls: str = ""  # comma separated label=url pairs
    # paths
    ledger: str = "proxyaudit.jsonl"
    potential_list: str = "potential.txt"
    geo_table: str = ""  # empty: the bundled fixture table
    # selection service
    bind_host: str = "127.0.0.1"
    service_port: int = 8080
    snapshot_interval: float = _duration(60.0)

    def validate(self) -> "Config":
        for f in fields(self):
            value = getattr(self, f.name)
            if f.metadata.get("duration") and not value > 0:
                raise ConfigError(f"{f.name} must be positive")
            if f.type in ("int", int) and f.name.endswith(("parallelism", "days")) and value < 1:
                raise ConfigError(f"{f.name} must be at least 1")
        if not 0 < self.similarity_threshold <= 1:
            raise ConfigError("similarity_threshold must be in (0, 1]")
        if not 0 < self.https_ratio <= 1 or abs(round(1 / self.https_ratio) * self.https_ratio - 1) > 1e-9:
            raise ConfigError("https_ratio must be 1/n for a whole number n")
        if not 0 < self.service_port < 65536:
            raise ConfigError("service_port out of range")
        return self

    def references(self) -> dict[str, str]:
        out = {}
        for item in filter(None, (s.strip() for s in self.reference_urls.split(","))):
            label, sep, url = item.partition("=")
            if not sep:
                raise ConfigError(f"reference_urls entry {item!r} is not label=url")
            out[label.strip()] = url.strip()
        return out

    def with_values(self, values: Mapping[str, object]) -> "Config":
        """Copy with string or typed values coerced onto the declared field types."""
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, raw in values.items():
            f = known.get(key)
            if f is None:
                raise ConfigError(f"unknown setting {key!r}")
            changes[key] = _coerce(f, raw)
        return dataclasses.replace(self, **changes)


def _coerce(f, raw):
    if raw is None:
        return raw
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if f.metadata.get("duration"):
            return parse_duration(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{f.name}: {exc}") from None
    return str(raw)


def read_config_file(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def load_config(path: Optional[str] = None, env: Optional[Mapping[str, str]] = None) -> Config:
    """Defaults, then the file (if any), then environment overrides; validated."""
    cfg = Config()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = cfg.with_values(read_config_file(path))
    env = os.environ if env is None else env
    overrides = {k[len(ENV_PREFIX):].lower(): v for k, v in env.items() if k.startswith(ENV_PREFIX)}
    if overrides:
        cfg = cfg.with_values(overrides)
    return cfg.validate()
