"""Tamper-evident append-only block chain.

Block hashes commit to the canonical header string
``HDR1|<height>|<timestamp>|<payload_digest>|<previous_hash>|<proposer_id>``
and the payload digest commits to the canonical JSON bytes of the envelope
list, so any post-commit edit of any field is detectable by recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .canonical import canonical_bytes, canonical_dumps, sha256_hex
from .errors import BadHash, BadHeight, BadLinkage, BadSignature, BadTimestamp
from .identity import verify_hex

ZERO_HASH = "0" * 64
GENESIS_PROPOSER = "GENESIS"

HEADER_PREFIX = "HDR1"

_BLOCK_KEYS = {
    "height", "timestamp", "payload", "payload_digest",
    "previous_hash", "hash", "proposer_id", "proposer_signature",
}
_GENESIS_KEYS = _BLOCK_KEYS - {"proposer_signature"}

# Resolves a proposer_id to its verification key; returns None for unknown ids.
KeyResolver = Callable[[str], Optional[Ed25519PublicKey]]


def payload_digest(payload: Iterable[dict]) -> str:
    return sha256_hex(canonical_bytes(list(payload)))


def header_string(height: int, timestamp: int, payload_digest_hex: str,
                  previous_hash: str, proposer_id: str) -> str:
    return (
        f"{HEADER_PREFIX}|{height}|{timestamp}|{payload_digest_hex}"
        f"|{previous_hash}|{proposer_id}"
    )


def compute_block_hash(height: int, timestamp: int, payload_digest_hex: str,
                       previous_hash: str, proposer_id: str) -> str:
    """Deterministic SHA-256 of the canonical header serialization."""
    header = header_string(height, timestamp, payload_digest_hex,
                           previous_hash, proposer_id)
    return sha256_hex(header.encode("utf-8"))


@dataclass(frozen=True)
class Block:
    height: int
    timestamp: int
    payload: tuple  # committed-record envelopes, canonical dicts
    payload_digest: str
    previous_hash: str
    hash: str
    proposer_id: str
    proposer_signature: str | None = None  # hex over hash bytes; None on genesis

    def to_dict(self) -> dict:
        d = {
            "height": self.height,
            "timestamp": self.timestamp,
            "payload": list(self.payload),
            "payload_digest": self.payload_digest,
            "previous_hash": self.previous_hash,
            "hash": self.hash,
            "proposer_id": self.proposer_id,
        }
        if self.proposer_signature is not None:
            d["proposer_signature"] = self.proposer_signature
        return d

    def to_json_line(self) -> str:
        return canonical_dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        if not isinstance(d, dict):
            raise ValueError("block must be a JSON object")
        keys = set(d)
        if keys != _BLOCK_KEYS and keys != _GENESIS_KEYS:
            unexpected = keys ^ (_BLOCK_KEYS if "proposer_signature" in keys else _GENESIS_KEYS)
            raise ValueError(f"unexpected block fields: {sorted(unexpected)}")
        if not isinstance(d["height"], int) or isinstance(d["height"], bool) or d["height"] < 0:
            raise ValueError("height must be a non-negative integer")
        if not isinstance(d["timestamp"], int) or isinstance(d["timestamp"], bool):
            raise ValueError("timestamp must be an integer")
        if not isinstance(d["payload"], list) or not all(isinstance(e, dict) for e in d["payload"]):
            raise ValueError("payload must be a list of envelope objects")
        for name in ("payload_digest", "previous_hash", "hash"):
            v = d[name]
            if not (isinstance(v, str) and len(v) == 64 and _is_lower_hex(v)):
                raise ValueError(f"{name} must be 64 lowercase hex chars")
        if not isinstance(d["proposer_id"], str) or not d["proposer_id"]:
            raise ValueError("proposer_id must be a nonempty string")
        sig = d.get("proposer_signature")
        if sig is not None and not (isinstance(sig, str) and _is_lower_hex(sig)):
            raise ValueError("proposer_signature must be lowercase hex")
        return cls(
            height=d["height"],
            timestamp=d["timestamp"],
            payload=tuple(d["payload"]),
            payload_digest=d["payload_digest"],
            previous_hash=d["previous_hash"],
            hash=d["hash"],
            proposer_id=d["proposer_id"],
            proposer_signature=sig,
        )


def _is_lower_hex(s: str) -> bool:
    return all(c in "0123456789abcdef" for c in s)


def create_genesis() -> Block:
    """The constant genesis block: fixed fields, identical bytes every call."""
    pd = payload_digest([])
    h = compute_block_hash(0, 0, pd, ZERO_HASH, GENESIS_PROPOSER)
    return Block(
        height=0,
        timestamp=0,
        payload=(),
        payload_digest=pd,
        previous_hash=ZERO_HASH,
        hash=h,
        proposer_id=GENESIS_PROPOSER,
        proposer_signature=None,
    )


@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=lambda: [create_genesis()])

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def __len__(self) -> int:
        return len(self.blocks)

    def to_json_lines(self) -> list[str]:
        return [b.to_json_line() for b in self.blocks]


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    height: int | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        if self.ok:
            return {"ok": True}
        return {"ok": False, "first_violation": {"height": self.height, "reason": self.reason}}


def append_block(chain: Chain, block: Block,
                 key_resolver: KeyResolver | None = None) -> Chain:
    """Append `block` after checking every precondition; chain untouched on error."""
    tip = chain.tip
    if block.previous_hash != tip.hash:
        raise BadLinkage(f"previous_hash {block.previous_hash[:12]}… does not match tip")
    if block.height != tip.height + 1:
        raise BadHeight(f"expected height {tip.height + 1}, got {block.height}")
    if block.timestamp < tip.timestamp:
        raise BadTimestamp(f"timestamp {block.timestamp} precedes tip {tip.timestamp}")
    if block.payload_digest != payload_digest(block.payload):
        raise BadHash("payload digest does not match payload")
    expected = compute_block_hash(block.height, block.timestamp, block.payload_digest,
                                  block.previous_hash, block.proposer_id)
    if block.hash != expected:
        raise BadHash("stored hash does not match recomputed header digest")
    if block.proposer_signature is None:
        raise BadSignature("missing proposer signature")
    if key_resolver is not None:
        pub = key_resolver(block.proposer_id)
        if pub is None:
            raise BadSignature(f"unknown proposer {block.proposer_id}")
        if not verify_hex(pub, block.proposer_signature, block.hash.encode("utf-8")):
            raise BadSignature("proposer signature does not verify")
    chain.blocks.append(block)  # single atomic mutation; see concurrency notes
    return chain


def _check_genesis(block: Block) -> str | None:
    golden = create_genesis()
    if block.to_dict() != golden.to_dict():
        return "bad_genesis"
    return None


def validate_chain(chain: Chain, key_resolver: KeyResolver | None = None) -> ValidationResult:
    """Full structural re-validation; reports the lowest offending height.

    With a `key_resolver` proposer signatures are verified as well; without
    one only their presence is required (the ledger does not know validator
    keys).
    """
    if not chain.blocks:
        return ValidationResult(False, 0, "missing_genesis")
    reason = _check_genesis(chain.blocks[0])
    if reason:
        return ValidationResult(False, 0, reason)
    for i in range(1, len(chain.blocks)):
        block, prev = chain.blocks[i], chain.blocks[i - 1]
        if block.height != prev.height + 1:
            return ValidationResult(False, block.height, "bad_height")
        if block.previous_hash != prev.hash:
            return ValidationResult(False, block.height, "bad_linkage")
        if block.timestamp < prev.timestamp:
            return ValidationResult(False, block.height, "bad_timestamp")
        if block.payload_digest != payload_digest(block.payload):
            return ValidationResult(False, block.height, "payload_digest_mismatch")
        expected = compute_block_hash(block.height, block.timestamp, block.payload_digest,
                                      block.previous_hash, block.proposer_id)
        if block.hash != expected:
            return ValidationResult(False, block.height, "hash_mismatch")
        if block.proposer_signature is None:
            return ValidationResult(False, block.height, "missing_signature")
        if key_resolver is not None:
            pub = key_resolver(block.proposer_id)
            if pub is None:
                return ValidationResult(False, block.height, "unknown_proposer")
            if not verify_hex(pub, block.proposer_signature, block.hash.encode("utf-8")):
                return ValidationResult(False, block.height, "bad_signature")
    return ValidationResult(True)


def get_block(chain: Chain, *, height: int | None = None,
              block_hash: str | None = None) -> Block | None:
    if (height is None) == (block_hash is None):
        raise ValueError("select by exactly one of height or block_hash")
    if height is not None:
        if 0 <= height < len(chain.blocks):
            return chain.blocks[height]
        return None
    for block in chain.blocks:
        if block.hash == block_hash:
            return block
    return None
