"""Canonical JSON and digest helpers.

Every hashed or signed byte string in the system comes through here, so the
rules are deliberately rigid: UTF-8, keys sorted by code point, no
insignificant whitespace, integers in shortest decimal form. Floats are
allowed only where their shortest repr has no exponent (covers coordinates
and similar decimals); integral floats collapse to integers so that browser
JSON.stringify produces the identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any


class CanonicalizationError(ValueError):
    pass


def _normalize(value: Any) -> Any:
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise CanonicalizationError("non-finite numbers are not canonical")
        if value.is_integer():
            if abs(value) > 2**53:
                raise CanonicalizationError(
                    f"float {value!r} exceeds exact interchange range")
            return int(value)
        if "e" in repr(value) or "E" in repr(value):
            raise CanonicalizationError(
                f"float {value!r} needs exponent notation and is not canonical"
            )
        return value
    if isinstance(value, dict):
        out = {}
        for key in value:
            if not isinstance(key, str):
                raise CanonicalizationError(f"non-string key {key!r}")
            out[key] = _normalize(value[key])
        return out
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    raise CanonicalizationError(f"type {type(value).__name__} is not canonicalizable")


def canonical_dumps(value: Any) -> str:
    """Canonical JSON text for `value`."""
    return json.dumps(
        _normalize(value),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )


def canonical_bytes(value: Any) -> bytes:
    return canonical_dumps(value).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest(value: Any) -> str:
    """SHA-256 hex digest of the canonical JSON bytes of `value`."""
    return sha256_hex(canonical_bytes(value))
