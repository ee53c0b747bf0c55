"""Stakeholder identities, the role/action permission matrix, and envelope
signature verification.

The matrix is total: `authorize` answers allow/deny for every (role, action)
pair, and unauthenticated callers get the consumer read-only subset. Trace
and chain reads are public by design.
"""

from __future__ import annotations

from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .canonical import canonical_bytes
from .errors import BadSignature, DuplicateId, Unauthorized, UnknownStakeholder
from .identity import public_key_from_hex, public_key_hex, verify_hex

ROLES = ("cultivator", "maker", "merchant", "consumer", "admin")

ACTIONS = (
    "submit_cultivator_record",
    "submit_maker_record",
    "submit_merchant_record",
    "confirm_cultivator_record",   # maker attests an upstream cultivator record
    "confirm_maker_record",        # merchant attests an upstream maker record
    "issue_qr",
    "register_stakeholder",
    "trace",
    "read_chain",
    "decode_qr",
)

_PUBLIC_READ = frozenset({"trace", "read_chain", "decode_qr"})

PERMISSION_MATRIX: dict[str, frozenset[str]] = {
    "cultivator": _PUBLIC_READ | {"submit_cultivator_record"},
    "maker": _PUBLIC_READ | {"submit_maker_record", "confirm_cultivator_record"},
    "merchant": _PUBLIC_READ | {"submit_merchant_record", "confirm_maker_record", "issue_qr"},
    "consumer": _PUBLIC_READ,
    "admin": _PUBLIC_READ | {"register_stakeholder"},
}


@dataclass(frozen=True)
class StakeholderIdentity:
    stakeholder_id: str
    role: str
    public_key_hex: str
    display_name: str
    contact: str

    def public_key(self) -> Ed25519PublicKey:
        return public_key_from_hex(self.public_key_hex)

    def to_dict(self) -> dict:
        return {
            "stakeholder_id": self.stakeholder_id,
            "role": self.role,
            "public_key": self.public_key_hex,
            "display_name": self.display_name,
            "contact": self.contact,
        }


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.allowed


ALLOW = Decision(True)


class StakeholderRegistry:
    """Committed identities plus the config-bootstrapped admin."""

    def __init__(self):
        self._identities: dict[str, StakeholderIdentity] = {}

    def __contains__(self, stakeholder_id: str) -> bool:
        return stakeholder_id in self._identities

    def __len__(self) -> int:
        return len(self._identities)

    def get(self, stakeholder_id: str) -> StakeholderIdentity | None:
        return self._identities.get(stakeholder_id)

    def role_of(self, stakeholder_id: str) -> str | None:
        ident = self._identities.get(stakeholder_id)
        return ident.role if ident else None

    def add(self, identity: StakeholderIdentity) -> None:
        if identity.role not in ROLES:
            raise DuplicateId(f"unknown role {identity.role!r}")  # pragma: no cover
        if identity.stakeholder_id in self._identities:
            raise DuplicateId(f"stakeholder {identity.stakeholder_id!r} already registered")
        self._identities[identity.stakeholder_id] = identity

    def authorize(self, stakeholder_id: str | None, action: str) -> Decision:
        """Allow iff the matrix grants the caller's role the action.

        Unauthenticated callers (None) hold the public read subset only.
        """
        if action not in ACTIONS:
            return Decision(False, f"unknown action {action!r}")
        if stakeholder_id is None:
            if action in _PUBLIC_READ:
                return ALLOW
            return Decision(False, "authentication required")
        ident = self._identities.get(stakeholder_id)
        if ident is None:
            return Decision(False, f"unknown stakeholder {stakeholder_id!r}")
        if action in PERMISSION_MATRIX[ident.role]:
            return ALLOW
        return Decision(False, f"role {ident.role!r} may not {action}")

    def verify_envelope_signature(self, envelope: dict) -> bool:
        """True iff the signature verifies over the canonical body bytes
        under the submitter's registered key."""
        stakeholder_id = envelope.get("stakeholder_id")
        ident = self._identities.get(stakeholder_id)
        if ident is None:
            raise UnknownStakeholder(f"stakeholder {stakeholder_id!r} is not registered")
        signature = envelope.get("signature", "")
        if not isinstance(signature, str):
            return False
        return verify_hex(ident.public_key(), signature, canonical_bytes(envelope.get("body")))


def require(decision: Decision) -> None:
    if not decision.allowed:
        raise Unauthorized(decision.reason or "denied")


def require_valid_signature(registry: StakeholderRegistry, envelope: dict) -> None:
    if not registry.verify_envelope_signature(envelope):
        raise BadSignature("envelope signature does not verify over canonical body bytes")


def identity_from_registration_body(body: dict) -> StakeholderIdentity:
    """Build an identity from a `stakeholder_registration` envelope body."""
    ident = StakeholderIdentity(
        stakeholder_id=body["stakeholder_id"],
        role=body["role"],
        public_key_hex=body["public_key"],
        display_name=body["display_name"],
        contact=body["contact"],
    )
    public_key_hex(ident.public_key())  # key must parse
    return ident
