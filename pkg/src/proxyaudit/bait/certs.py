"""Repo-local TLS certificate fixtures and X.509 inspection helpers.

Fixtures live next to this module as ``<name>.crt``/``<name>.key``.
Regenerate with ``python -m proxyaudit.bait.certs`` (this changes the
pinned bait fingerprint, so rerun the test-suite afterwards).
"""

from __future__ import annotations

import datetime as dt
import hashlib
import ssl
from importlib import resources
from pathlib import Path

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

from ..model import CertInfo

FIXTURE_DIR = Path(str(resources.files(__package__).joinpath("fixtures")))

# name -> CommonName. "mitm" imitates the vague self-signed certificates
# substituted by intercepting proxies.
FIXTURES = {
    "bait": "bait.proxyaudit.test",
    "ref-a": "ref-a.proxyaudit.test",
    "ref-b": "ref-b.proxyaudit.test",
    "mitm": "https",
}


def generate_self_signed(common_name: str) -> tuple[bytes, bytes]:
    """(certificate PEM, private key PEM) for a fresh self-signed EC certificate."""
    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(dt.datetime(2024, 1, 1, tzinfo=dt.timezone.utc))
        .not_valid_after(dt.datetime(2044, 1, 1, tzinfo=dt.timezone.utc))
        .add_extension(x509.SubjectAlternativeName([x509.DNSName(common_name)]), critical=False)
        .sign(key, hashes.SHA256())
    )
    key_pem = key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    )
    return cert.public_bytes(serialization.Encoding.PEM), key_pem


def fixture_paths(name: str) -> tuple[Path, Path]:
    return FIXTURE_DIR / f"{name}.crt", FIXTURE_DIR / f"{name}.key"


def server_context(name: str = "bait") -> ssl.SSLContext:
    crt, key = fixture_paths(name)
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.load_cert_chain(str(crt), str(key))
    return ctx


def fingerprint(der: bytes) -> str:
    return hashlib.sha256(der).hexdigest()


def fixture_fingerprint(name: str = "bait") -> str:
    crt, _ = fixture_paths(name)
    cert = x509.load_pem_x509_certificate(crt.read_bytes())
    return fingerprint(cert.public_bytes(serialization.Encoding.DER))


def is_self_signed(cert: x509.Certificate) -> bool:
    if cert.issuer != cert.subject:
        return False
    try:
        cert.verify_directly_issued_by(cert)
    except Exception:
        return False
    return True


def describe(chain: list[bytes]) -> CertInfo:
    """Summarise a presented chain (DER, leaf first)."""
    if not chain:
        return CertInfo("", "", "", False, 0)
    leaf = x509.load_der_x509_certificate(chain[0])
    return CertInfo(
        fingerprint=fingerprint(chain[0]),
        subject=leaf.subject.rfc4514_string(),
        issuer=leaf.issuer.rfc4514_string(),
        self_signed=is_self_signed(leaf),
        chain_length=len(chain),
    )


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    for name, cn in FIXTURES.items():
        cert, key = generate_self_signed(cn)
        crt_path, key_path = fixture_paths(name)
        crt_path.write_bytes(cert)
        key_path.write_bytes(key)
        print(f"{name}: {fixture_fingerprint(name)}")


if __name__ == "__main__":
    main()
