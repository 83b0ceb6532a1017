"""Ground-truth content served by the bait origin.

Every byte is derived from fixed seeds, so two builds serve identical
objects. Sizes follow the shape of a small realistic landing page; what
matters to the auditors is byte identity, not the exact sizes.
"""

from __future__ import annotations

import random
import struct
import zlib
from dataclasses import dataclass, field
from functools import lru_cache

from .certs import fixture_fingerprint

OBJECT_1KB = "/object-1kb"
INDEX = "/index.html"
SUBRESOURCES = (
    "/js/analytics.js",
    "/js/app.js",
    "/img/banner.png",
    "/img/logo.png",
    "/favicon.ico",
)

_WORDS = (
    "proxy network content origin free list country speed secure page load "
    "browser request header cache server client anonymous trusted report data "
    "latency cloud route address stream window object image script style"
).split()


class UnknownObject(KeyError):
    pass


@dataclass(frozen=True)
class BaitSite:
    objects: dict[str, tuple[bytes, str]] = field(default_factory=dict)
    tls_leaf_fingerprint: str = ""

    def expected_content(self, path: str) -> tuple[bytes, str]:
        try:
            return self.objects[path]
        except KeyError:
            raise UnknownObject(path) from None

    @property
    def paths(self) -> list[str]:
        return list(self.objects)


def expected_content(path: str) -> tuple[bytes, str]:
    """Exact bytes and content type the bait origin serves for ``path``."""
    return bait_site().expected_content(path)


def content_class(content_type: str) -> str:
    ct = content_type.split(";")[0].strip().lower()
    if ct == "text/html":
        return "html"
    if ct in ("application/javascript", "text/javascript"):
        return "script"
    if ct.startswith("image/"):
        return "image"
    return "other"


def _object_1kb() -> bytes:
    # 100 whitespace-separated tokens in exactly 1024 bytes, so similarity
    # scores against it move in steps of 0.01
    tokens = [f"{_WORDS[i % len(_WORDS)]}{i:02d}" for i in range(100)]
    body = " ".join(tokens)
    pad = 1024 - len(body) - 1
    assert pad >= 0
    tokens[-1] += "x" * pad
    out = (" ".join(tokens) + "\n").encode()
    assert len(out) == 1024
    return out


def _prose(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(n_words))


def _script(rng: random.Random, size: int, name: str) -> bytes:
    lines = [f"/* {name} */", "(function () {", "  var q = window.q || [];"]
    i = 0
    while sum(len(x) + 1 for x in lines) < size - 8:
        lines.append(f"  q.push({{ id: {i}, k: '{rng.choice(_WORDS)}', v: {rng.randint(0, 99999)} }});")
        i += 1
    lines.append("})();")
    return ("\n".join(lines) + "\n").encode()


def _png(rng: random.Random, width: int, height: int) -> bytes:
    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + bytes(rng.getrandbits(8) for _ in range(width * 3)) for _ in range(height))
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def _ico(png: bytes, size: int) -> bytes:
    header = struct.pack("<HHH", 0, 1, 1)
    entry = struct.pack("<BBBBHHII", size, size, 0, 0, 1, 32, len(png), 6 + 16)
    return header + entry + png


def _index(rng: random.Random, target: int) -> bytes:
    head = (
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        "<title>Free proxy test page</title>\n"
        "<link rel=\"icon\" href=\"/favicon.ico\">\n"
        "<script src=\"/js/analytics.js\"></script>\n"
        "</head>\n<body>\n"
        "<img src=\"/img/logo.png\" alt=\"logo\">\n"
        "<div id=\"ad-slot-top\" class=\"ad banner\" style=\"width:728px;height:90px\"></div>\n"
    )
    tail = (
        "<img src=\"/img/banner.png\" alt=\"banner\">\n"
        "<div id=\"ad-slot-side\" class=\"ad\" style=\"width:300px;height:250px\"></div>\n"
        "<script src=\"/js/app.js\"></script>\n"
        "</body>\n</html>\n"
    )
    parts = [head]
    size = len(head) + len(tail)
    n = 0
    while size < target:
        para = f"<p id=\"p{n}\">{_prose(rng, 40)}</p>\n"
        parts.append(para)
        size += len(para)
        n += 1
    parts.append(tail)
    return "".join(parts).encode()


@lru_cache(maxsize=1)
def bait_site() -> BaitSite:
    rng = random.Random(20180101)
    logo = _png(rng, 22, 22)
    objects = {
        OBJECT_1KB: (_object_1kb(), "text/plain"),
        INDEX: (_index(rng, 83_700), "text/html; charset=utf-8"),
        "/js/analytics.js": (_script(rng, 635, "analytics.js"), "application/javascript"),
        "/js/app.js": (_script(rng, 22_900, "app.js"), "application/javascript"),
        "/img/logo.png": (logo, "image/png"),
        "/img/banner.png": (_png(rng, 67, 67), "image/png"),
        "/favicon.ico": (_ico(_png(rng, 37, 37), 37), "image/x-icon"),
    }
    return BaitSite(objects, fixture_fingerprint("bait"))


def landing_page(name: str, size: int) -> bytes:
    """A deterministic HTML landing page of roughly ``size`` bytes."""
    rng = random.Random(name)
    head = f"<!DOCTYPE html>\n<html>\n<head><title>{name}</title></head>\n<body>\n"
    tail = "</body>\n</html>\n"
    parts = [head]
    total = len(head) + len(tail)
    while total < size:
        para = f"<p>{_prose(rng, 12)}</p>\n"
        parts.append(para)
        total += len(para)
    parts.append(tail)
    return "".join(parts).encode()


def landing_site(name: str, size: int = 10_240) -> dict[str, tuple[bytes, str]]:
    return {"/": (landing_page(name, size), "text/html; charset=utf-8")}
