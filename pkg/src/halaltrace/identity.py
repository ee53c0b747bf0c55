"""Ed25519 key handling for stakeholders and validators.

Keys are stored as 32-byte hex seeds; public keys travel as 64-char hex.
Signatures are RFC 8032 (deterministic), hex-encoded on the wire.
"""

from __future__ import annotations

import os
import secrets
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat


def generate_signing_key() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def signing_key_from_seed(seed: bytes) -> Ed25519PrivateKey:
    if len(seed) != 32:
        raise ValueError("Ed25519 seed must be exactly 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(seed)


def signing_key_from_hex(seed_hex: str) -> Ed25519PrivateKey:
    return signing_key_from_seed(bytes.fromhex(seed_hex.strip()))


def public_key_hex(key: Ed25519PrivateKey | Ed25519PublicKey) -> str:
    if isinstance(key, Ed25519PrivateKey):
        key = key.public_key()
    return key.public_bytes(Encoding.Raw, PublicFormat.Raw).hex()


def public_key_from_hex(hex_str: str) -> Ed25519PublicKey:
    raw = bytes.fromhex(hex_str.strip())
    if len(raw) != 32:
        raise ValueError("Ed25519 public key must be exactly 32 bytes")
    return Ed25519PublicKey.from_public_bytes(raw)


def sign_hex(key: Ed25519PrivateKey, message: bytes) -> str:
    return key.sign(message).hex()


def verify_hex(public_key: Ed25519PublicKey, signature_hex: str, message: bytes) -> bool:
    try:
        public_key.verify(bytes.fromhex(signature_hex), message)
        return True
    except (InvalidSignature, ValueError):
        return False


def write_key_file(path: str | Path, key: Ed25519PrivateKey | None = None) -> Ed25519PrivateKey:
    """Write (or create) a hex seed file with owner-only permissions."""
    key = key or generate_signing_key()
    from cryptography.hazmat.primitives.serialization import (
        NoEncryption,
        PrivateFormat,
    )

    seed = key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as fh:
        fh.write(seed.hex() + "\n")
    return key


def read_key_file(path: str | Path) -> Ed25519PrivateKey:
    text = Path(path).read_text().strip()
    return signing_key_from_hex(text)


def load_or_create_key(path: str | Path) -> Ed25519PrivateKey:
    path = Path(path)
    if path.exists():
        return read_key_file(path)
    return write_key_file(path)


def random_hex(n_bytes: int = 16) -> str:
    return secrets.token_hex(n_bytes)
