"""Offline IP to (country, ASN, AS name) lookup by longest-prefix match."""

from __future__ import annotations

import csv
import ipaddress
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional

UNKNOWN_COUNTRY = "ZZ"


class GeoInfo(NamedTuple):
    country: str
    asn: int
    as_name: str


UNKNOWN = GeoInfo(UNKNOWN_COUNTRY, 0, "unknown")


class GeoTable:
    """CIDR table loaded from a ``cidr,country,asn,as_name`` CSV."""

    def __init__(self, rows: list[tuple[str, str, int, str]]) -> None:
        # one dict per prefix length, probed longest first
        self._by_len: dict[int, dict[int, GeoInfo]] = {}
        for cidr, country, asn, name in rows:
            net = ipaddress.IPv4Network(cidr, strict=True)
            self._by_len.setdefault(net.prefixlen, {})[int(net.network_address)] = GeoInfo(country, int(asn), name)
        self._lengths = sorted(self._by_len, reverse=True)
        self.size = sum(len(v) for v in self._by_len.values())

    @classmethod
    def load(cls, path) -> "GeoTable":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"geo database not found: {path}")
        rows = []
        with path.open(newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].startswith("#") or rec[0] == "cidr":
                    continue
                cidr, country, asn, name = (x.strip() for x in rec[:4])
                rows.append((cidr, country, int(asn), name))
        return cls(rows)

    @classmethod
    def fixture(cls) -> "GeoTable":
        with resources.as_file(resources.files(__package__) / "data" / "geo_fixture.csv") as p:
            return cls.load(p)

    def lookup(self, ip: str) -> GeoInfo:
        addr = int(ipaddress.IPv4Address(ip))
        for plen in self._lengths:
            mask = (0xFFFFFFFF << (32 - plen)) & 0xFFFFFFFF if plen else 0
            hit = self._by_len[plen].get(addr & mask)
            if hit is not None:
                return hit
        return UNKNOWN


def geo_lookup(ip: str, table: Optional[GeoTable] = None) -> GeoInfo:
    return (table or GeoTable.fixture()).lookup(ip)
