import dataclasses
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from proxyaudit.bait import Harness  # noqa: E402
from proxyaudit.config import Config  # noqa: E402


# Loopback timeouts: the real 3 s / 30 s / 45 s values would make every
# blackhole and slow-drip case take minutes.
FAST = dataclasses.replace(
    Config(),
    connect_timeout=0.5,
    probe_max_duration=2.0,
    audit_max_duration=3.0,
    tls_max_duration=2.0,
    perf_max_duration=2.0,
    probe_parallelism=64,
    audit_parallelism=32,
)


@pytest.fixture
def fast_config():
    return dataclasses.replace(FAST)


@pytest.fixture(scope="module")
def harness():
    h = Harness()
    yield h
    h.close()


@pytest.fixture(scope="module")
def origin(harness):
    return harness.serve_bait()


@pytest.fixture(scope="module")
def references(harness):
    a = harness.serve_site("ref-a", tls_cert="ref-a")
    b = harness.serve_site("ref-b", tls_cert="ref-b")
    return {"ref-a": a.tls_base_url + "/", "ref-b": b.tls_base_url + "/"}


# --- acceptance reporting: one PASS/FAIL line per criterion -----------------

_CRITERIA: dict = {}


class _Criterion:
    def __init__(self, number: int, title: str) -> None:
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc_type is None else f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        _CRITERIA[self.number] = f"criterion {self.number:>2} {status}  {self.title}" + (f"  [{detail}]" if detail else "")
        print(_CRITERIA[self.number])
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
