"""Append-only JSON Lines record store with a single-writer lock."""

from __future__ import annotations

import fcntl
import json
import logging
import os
import threading
from pathlib import Path
from typing import Iterator, Optional

from ..model import ValidationError
from . import codec

log = logging.getLogger(__name__)


class LedgerError(RuntimeError):
    pass


class LedgerLocked(LedgerError):
    """Another process holds the writer lock."""


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def read_lines(path: Path) -> Iterator[dict]:
    """Decoded objects from a ledger file; a torn final line is ignored."""
    path = Path(path)
    if not path.exists():
        return
    with path.open("rb") as fh:
        data = fh.read()
    lines = data.split(b"\n")
    tail_torn = not data.endswith(b"\n") and data != b""
    for i, line in enumerate(lines):
        if not line:
            continue
        if tail_torn and i == len(lines) - 1:
            break
        yield json.loads(line)


class Ledger:
    """One ledger file.

    ``Ledger(path)`` is a read-only view. ``Ledger(path, writable=True)``
    takes an exclusive lock on ``<path>.lock``, truncates a torn final line
    left by an interrupted writer, and checks that ``seq`` strictly increases.
    Appends are fsynced before ``append`` returns.
    """

    def __init__(self, path, writable: bool = False, fsync: bool = True) -> None:
        self.path = Path(path)
        self.writable = writable
        self.fsync = fsync
        self._lock = threading.Lock()
        self._lockfile = None
        self._fh = None
        self.last_seq = 0
        if writable:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._lockfile = open(str(self.path) + ".lock", "a+")
            try:
                fcntl.flock(self._lockfile.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                self._lockfile.close()
                raise LedgerLocked(f"{self.path} is locked by another writer") from None
            self._repair()
            self._fh = open(self.path, "ab")
        else:
            self.last_seq = self._scan()

    def _scan(self) -> int:
        last = 0
        for obj in read_lines(self.path):
            seq = obj.get("seq")
            if not isinstance(seq, int) or seq <= last:
                raise LedgerError(f"{self.path}: seq {seq!r} after {last} is not increasing")
            last = seq
        return last

    def _repair(self) -> None:
        if not self.path.exists():
            self.path.touch()
        size = self.path.stat().st_size
        if size:
            with open(self.path, "rb+") as fh:
                data = fh.read()
                if not data.endswith(b"\n"):
                    keep = data.rfind(b"\n") + 1
                    log.warning("%s: dropping torn final record (%d bytes)", self.path, size - keep)
                    fh.truncate(keep)
        self.last_seq = self._scan()

    def append(self, record) -> int:
        """Validate, encode and durably append ``record``; returns its seq."""
        if not self.writable:
            raise LedgerError("ledger opened read-only")
        kind, ts, fields = codec.encode(record)
        # the typed record already validated itself; round-trip to be sure the line decodes
        try:
            codec.decode(dict(fields, kind=kind))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError("invalid", f"{kind} record does not round-trip: {exc}") from exc
        with self._lock:
            seq = self.last_seq + 1
            line = _dumps({"kind": kind, "seq": seq, "ts": ts, **fields}) + "\n"
            self._fh.write(line.encode("ascii"))
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
            self.last_seq = seq
            return seq

    def extend(self, records) -> list[int]:
        return [self.append(r) for r in records]

    def raw(self, kind: Optional[str] = None) -> Iterator[dict]:
        for obj in read_lines(self.path):
            if kind is None or obj.get("kind") == kind:
                yield obj

    def records(self, kind: Optional[str] = None) -> Iterator:
        """Typed records, optionally of a single kind, in seq order."""
        if kind is not None and kind not in codec.KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        for obj in self.raw(kind):
            yield codec.decode(obj)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        if self._lockfile is not None:
            fcntl.flock(self._lockfile.fileno(), fcntl.LOCK_UN)
            self._lockfile.close()
            self._lockfile = None

    def __enter__(self) -> "Ledger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
