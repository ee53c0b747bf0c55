"""Staged supply-chain records: cultivator, maker, merchant.

Holds the trace-id grammar and generator, per-stage body validation,
cross-stage reference and date rules, confirmation rules, and the
ChainIndex view of everything committed to a chain.
"""

from __future__ import annotations

import random
import re
import secrets
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Iterable

from .canonical import canonical_bytes, sha256_hex
from .errors import (
    MalformedEnvelope,
    MalformedId,
    UnresolvedReference,
    ValidationFailed,
)
from .ledger import Chain

# Crockford base32: no I, L, O, U.
TRACE_ALPHABET = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"
TRACE_ID_RE = re.compile(r"^(CUL|MAK|MER)-[0-9A-HJKMNP-TV-Z]{8}$")

STAGES = ("CUL", "MAK", "MER")
STAGE_BY_TYPE = {
    "cultivator_record": "CUL",
    "maker_record": "MAK",
    "merchant_record": "MER",
}
TYPE_BY_STAGE = {v: k for k, v in STAGE_BY_TYPE.items()}
STAGE_ORDER = {"CUL": 0, "MAK": 1, "MER": 2}

# Downstream confirmer role per subject stage.
CONFIRMER_ROLE = {"CUL": "maker", "MAK": "merchant"}
CONFIRM_ACTION = {"CUL": "confirm_cultivator_record", "MAK": "confirm_maker_record"}

ENVELOPE_TYPES = (
    "cultivator_record",
    "maker_record",
    "merchant_record",
    "confirmation",
    "stakeholder_registration",
    "qr_issuance",
)

RAW_MATERIAL_TYPES = ("poultry", "livestock", "agricultural_produce")
ANIMAL_MATERIALS = frozenset({"poultry", "livestock"})

MAX_TEXT = 4096  # free-text cap, bytes of UTF-8

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


def new_trace_id(stage: str, rng: random.Random | None = None) -> str:
    """Fresh grammar-conforming id; uniqueness against the chain is the
    caller's job (collision re-draw in `fresh_trace_id`)."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    pick = rng.choice if rng is not None else secrets.choice
    return f"{stage}-" + "".join(pick(TRACE_ALPHABET) for _ in range(8))


def fresh_trace_id(stage: str, taken: set[str], rng: random.Random | None = None) -> str:
    while True:
        tid = new_trace_id(stage, rng)
        if tid not in taken:
            return tid


def parse_trace_id(trace_id: str) -> str:
    """Validate grammar; returns the stage prefix."""
    if not isinstance(trace_id, str) or not TRACE_ID_RE.match(trace_id):
        raise MalformedId(f"trace id {trace_id!r} does not match the grammar")
    return trace_id[:3]


def body_key(stakeholder_id: str, body: dict) -> str:
    """Idempotency key: the submitter plus the canonical body digest."""
    return f"{stakeholder_id}:{sha256_hex(canonical_bytes(body))}"


def envelope_key(envelope: dict) -> str:
    return sha256_hex(canonical_bytes(
        {k: envelope[k] for k in ("type", "body", "stakeholder_id", "signature")}
    ))


# ---------------------------------------------------------------------------
# field validation helpers
# ---------------------------------------------------------------------------

def _fail(fieldname: str, detail: str):
    raise ValidationFailed(detail, field=fieldname)


def _require_str(body: dict, fieldname: str, *, allow_empty: bool = False,
                 prefix: str = "") -> str:
    path = f"{prefix}{fieldname}"
    value = body.get(fieldname)
    if not isinstance(value, str):
        _fail(path, "must be a string")
    if not allow_empty and not value.strip():
        _fail(path, "must be nonempty")
    if len(value.encode("utf-8")) > MAX_TEXT:
        _fail(path, f"exceeds {MAX_TEXT} bytes")
    return value


def _require_int(body: dict, fieldname: str, *, minimum: int = 0, prefix: str = "") -> int:
    path = f"{prefix}{fieldname}"
    value = body.get(fieldname)
    if not isinstance(value, int) or isinstance(value, bool):
        _fail(path, "must be an integer")
    if value < minimum:
        _fail(path, f"must be >= {minimum}")
    return value


def _require_number(body: dict, fieldname: str, lo: float, hi: float, prefix: str = "") -> float:
    path = f"{prefix}{fieldname}"
    value = body.get(fieldname)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, "must be a number")
    if not (lo <= value <= hi):
        _fail(path, f"must be within [{lo}, {hi}]")
    return float(value)


def _require_date(body: dict, fieldname: str, prefix: str = "") -> date:
    path = f"{prefix}{fieldname}"
    value = body.get(fieldname)
    if not isinstance(value, str) or not _DATE_RE.match(value):
        _fail(path, "must be an ISO date (YYYY-MM-DD)")
    try:
        return date.fromisoformat(value)
    except ValueError:
        _fail(path, "is not a real calendar date")


def _require_keys(obj: dict, expected: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        _fail(where, "must be an object")
    extra = set(obj) - expected
    if extra:
        _fail(where, f"unexpected fields: {sorted(extra)}")
    missing = expected - set(obj)
    if missing:
        _fail(f"{where}.{sorted(missing)[0]}" if where else sorted(missing)[0], "is required")


def _utc_date(unix_seconds: int) -> date:
    return datetime.fromtimestamp(unix_seconds, tz=timezone.utc).date()


def validate_certification(cert: dict, prefix: str = "certification.") -> None:
    _require_keys(cert, {"cert_number", "issuing_body", "valid_from", "valid_to"},
                  prefix.rstrip("."))
    _require_str(cert, "cert_number", prefix=prefix)
    _require_str(cert, "issuing_body", prefix=prefix)
    valid_from = _require_date(cert, "valid_from", prefix=prefix)
    valid_to = _require_date(cert, "valid_to", prefix=prefix)
    if valid_from > valid_to:
        _fail(prefix + "valid_from", "must not be after valid_to")


# ---------------------------------------------------------------------------
# stage bodies
# ---------------------------------------------------------------------------

_CULTIVATOR_KEYS = {
    "facility", "raw_material_type", "husbandry_practices", "slaughter_method",
    "harvest_processing_description", "certification", "batch_lot", "recorded_at",
}

_MAKER_KEYS = {
    "ingredients", "production_process_description", "certification",
    "packaging_description", "cultivator_refs", "production_date",
    "batch_number", "quality_control", "recorded_at",
}

_MERCHANT_KEYS = {
    "purchase_date", "invoice_number", "supplier_contact", "storage_conditions",
    "storage_locations", "handling_procedures", "certification", "maker_ref",
    "recorded_at",
}


def validate_cultivator_body(body: dict) -> None:
    if not isinstance(body, dict):
        _fail("body", "must be an object")
    expected = _CULTIVATOR_KEYS if "slaughter_method" in body else _CULTIVATOR_KEYS - {"slaughter_method"}
    _require_keys(body, expected, "")
    facility = body.get("facility")
    _require_keys(facility, {"name", "latitude", "longitude", "manager_contact"}, "facility")
    _require_str(facility, "name", prefix="facility.")
    _require_number(facility, "latitude", -90.0, 90.0, prefix="facility.")
    _require_number(facility, "longitude", -180.0, 180.0, prefix="facility.")
    _require_str(facility, "manager_contact", prefix="facility.")
    material = _require_str(body, "raw_material_type")
    if material not in RAW_MATERIAL_TYPES:
        _fail("raw_material_type", f"must be one of {list(RAW_MATERIAL_TYPES)}")
    if material in ANIMAL_MATERIALS:
        if "slaughter_method" not in body:
            _fail("slaughter_method", "required for animal raw materials")
        _require_str(body, "slaughter_method")
    elif "slaughter_method" in body:
        _fail("slaughter_method", "only allowed for animal raw materials")
    _require_str(body, "husbandry_practices")
    _require_str(body, "harvest_processing_description")
    validate_certification(body.get("certification"))
    _require_str(body, "batch_lot")
    _require_int(body, "recorded_at")


def validate_maker_body(body: dict, index: "ChainIndex") -> None:
    if not isinstance(body, dict):
        _fail("body", "must be an object")
    _require_keys(body, _MAKER_KEYS, "")
    refs = body.get("cultivator_refs")
    if not isinstance(refs, list) or not refs:
        _fail("cultivator_refs", "must be a nonempty list")
    if len(set(refs)) != len(refs):
        _fail("cultivator_refs", "must not contain duplicates")
    referenced: list[CommittedRecord] = []
    for i, ref in enumerate(refs):
        if not isinstance(ref, str) or not TRACE_ID_RE.match(ref):
            _fail(f"cultivator_refs[{i}]", "does not match the trace-id grammar")
        if not ref.startswith("CUL-"):
            _fail(f"cultivator_refs[{i}].stage_prefix", "must be a CUL-stage id")
        rec = index.records.get(ref)
        if rec is None:
            raise UnresolvedReference(f"cultivator record {ref} is not committed",
                                      field=f"cultivator_refs[{i}]")
        referenced.append(rec)
    ingredients = body.get("ingredients")
    if not isinstance(ingredients, list) or not ingredients:
        _fail("ingredients", "must be a nonempty list")
    for i, ing in enumerate(ingredients):
        allowed = {"name", "cultivator_trace_ref"} if isinstance(ing, dict) and "cultivator_trace_ref" in ing else {"name"}
        _require_keys(ing, allowed, f"ingredients[{i}]")
        _require_str(ing, "name", prefix=f"ingredients[{i}].")
        ref = ing.get("cultivator_trace_ref")
        if ref is not None and ref not in refs:
            _fail(f"ingredients[{i}].cultivator_trace_ref", "must appear in cultivator_refs")
    _require_str(body, "production_process_description")
    _require_str(body, "packaging_description")
    validate_certification(body.get("certification"))
    production_date = _require_date(body, "production_date")
    _require_str(body, "batch_number")
    qc = body.get("quality_control")
    _require_keys(qc, {"notes", "staff_halal_trained"}, "quality_control")
    _require_str(qc, "notes", allow_empty=True, prefix="quality_control.")
    if not isinstance(qc.get("staff_halal_trained"), bool):
        _fail("quality_control.staff_halal_trained", "must be a boolean")
    recorded_at = _require_int(body, "recorded_at")
    latest_upstream = max(rec.body["recorded_at"] for rec in referenced)
    if production_date < _utc_date(latest_upstream):
        _fail("production_date", "precedes a referenced cultivator record")
    if recorded_at < latest_upstream:
        _fail("recorded_at", "precedes a referenced cultivator record")


def validate_merchant_body(body: dict, index: "ChainIndex") -> None:
    if not isinstance(body, dict):
        _fail("body", "must be an object")
    _require_keys(body, _MERCHANT_KEYS, "")
    ref = body.get("maker_ref")
    if not isinstance(ref, str) or not TRACE_ID_RE.match(ref):
        _fail("maker_ref", "does not match the trace-id grammar")
    if not ref.startswith("MAK-"):
        _fail("maker_ref.stage_prefix", "must be a MAK-stage id")
    maker = index.records.get(ref)
    if maker is None:
        raise UnresolvedReference(f"maker record {ref} is not committed", field="maker_ref")
    purchase_date = _require_date(body, "purchase_date")
    _require_str(body, "invoice_number")
    _require_str(body, "supplier_contact")
    _require_str(body, "storage_conditions")
    _require_str(body, "storage_locations")
    _require_str(body, "handling_procedures")
    validate_certification(body.get("certification"))
    recorded_at = _require_int(body, "recorded_at")
    if purchase_date < date.fromisoformat(maker.body["production_date"]):
        _fail("purchase_date", "precedes the maker production date")
    if recorded_at < maker.body["recorded_at"]:
        _fail("recorded_at", "precedes the referenced maker record")


def validate_confirmation_body(body: dict) -> None:
    _require_keys(body, {"subject_trace_id", "recorded_at"}, "")
    subject = body.get("subject_trace_id")
    if not isinstance(subject, str) or not TRACE_ID_RE.match(subject):
        _fail("subject_trace_id", "does not match the trace-id grammar")
    _require_int(body, "recorded_at")


def validate_registration_body(body: dict) -> None:
    from .registry import ROLES
    _require_keys(body, {"stakeholder_id", "role", "public_key", "display_name", "contact"}, "")
    _require_str(body, "stakeholder_id")
    role = _require_str(body, "role")
    if role not in ROLES:
        _fail("role", f"must be one of {list(ROLES)}")
    key = _require_str(body, "public_key")
    if len(key) != 64 or any(c not in "0123456789abcdef" for c in key):
        _fail("public_key", "must be 64 lowercase hex chars")
    _require_str(body, "display_name")
    _require_str(body, "contact")


def validate_issuance_body(body: dict) -> None:
    _require_keys(body, {"subject_trace_id", "recorded_at"}, "")
    subject = body.get("subject_trace_id")
    if not isinstance(subject, str) or not TRACE_ID_RE.match(subject) or not subject.startswith("MER-"):
        _fail("subject_trace_id", "must be a MER-stage trace id")
    _require_int(body, "recorded_at")


def check_envelope_shape(envelope: dict) -> None:
    """Structural check of a submitted envelope (before any crypto)."""
    from .canonical import CanonicalizationError

    if not isinstance(envelope, dict):
        raise MalformedEnvelope("envelope must be a JSON object")
    extra = set(envelope) - {"type", "body", "stakeholder_id", "signature"}
    if extra:
        raise MalformedEnvelope(f"unexpected envelope fields: {sorted(extra)}")
    for key in ("type", "stakeholder_id", "signature"):
        if not isinstance(envelope.get(key), str) or not envelope[key]:
            raise MalformedEnvelope(f"envelope field {key!r} must be a nonempty string")
    if envelope["type"] not in ENVELOPE_TYPES:
        raise MalformedEnvelope(f"unknown envelope type {envelope['type']!r}")
    if not isinstance(envelope.get("body"), dict):
        raise MalformedEnvelope("envelope body must be a JSON object")
    try:
        canonical_bytes(envelope["body"])
    except CanonicalizationError as exc:
        raise MalformedEnvelope(f"body is not canonicalizable: {exc}") from None


# ---------------------------------------------------------------------------
# committed-chain index
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CommittedRecord:
    trace_id: str
    stage: str
    stakeholder_id: str
    body: dict
    height: int
    signature: str = ""

    @property
    def upstream_refs(self) -> tuple[str, ...]:
        if self.stage == "MAK":
            return tuple(self.body["cultivator_refs"])
        if self.stage == "MER":
            return (self.body["maker_ref"],)
        return ()


@dataclass(frozen=True)
class CommittedConfirmation:
    subject_trace_id: str
    confirmer_id: str
    height: int
    recorded_at: int

    def to_dict(self) -> dict:
        return {
            "subject_trace_id": self.subject_trace_id,
            "confirmer_id": self.confirmer_id,
            "verdict": "confirmed",
            "recorded_at": self.recorded_at,
            "block_height": self.height,
        }


@dataclass
class ChainIndex:
    """Incrementally maintained view of all committed envelopes."""

    records: dict[str, CommittedRecord] = field(default_factory=dict)
    by_body_key: dict[str, str] = field(default_factory=dict)  # body_key -> trace_id
    confirmations: dict[tuple[str, str], CommittedConfirmation] = field(default_factory=dict)
    registrations: list[dict] = field(default_factory=list)
    issuances: list[dict] = field(default_factory=list)
    downstream: dict[str, set[str]] = field(default_factory=dict)  # trace_id -> referrers
    next_height: int = 1

    def apply_block(self, block) -> None:
        for env in block.payload:
            self._apply_envelope(env, block.height)
        self.next_height = block.height + 1

    def _apply_envelope(self, env: dict, height: int) -> None:
        etype = env["type"]
        body = env["body"]
        if etype in STAGE_BY_TYPE:
            trace_id = env["trace_id"]
            rec = CommittedRecord(
                trace_id=trace_id,
                stage=STAGE_BY_TYPE[etype],
                stakeholder_id=env["stakeholder_id"],
                body=body,
                height=height,
                signature=env["signature"],
            )
            self.records[trace_id] = rec
            self.by_body_key[body_key(env["stakeholder_id"], body)] = trace_id
            for ref in rec.upstream_refs:
                self.downstream.setdefault(ref, set()).add(trace_id)
        elif etype == "confirmation":
            conf = CommittedConfirmation(
                subject_trace_id=body["subject_trace_id"],
                confirmer_id=env["stakeholder_id"],
                height=height,
                recorded_at=body["recorded_at"],
            )
            self.confirmations[(conf.subject_trace_id, conf.confirmer_id)] = conf
        elif etype == "stakeholder_registration":
            self.registrations.append({"height": height, **body})
        elif etype == "qr_issuance":
            self.issuances.append({"height": height, "stakeholder_id": env["stakeholder_id"], **body})

    @classmethod
    def from_chain(cls, chain: Chain) -> "ChainIndex":
        index = cls()
        for block in chain.blocks[1:]:
            index.apply_block(block)
        return index

    def confirmations_for(self, trace_id: str) -> list[CommittedConfirmation]:
        return sorted(
            (c for (subject, _), c in self.confirmations.items() if subject == trace_id),
            key=lambda c: (c.height, c.confirmer_id),
        )


# ---------------------------------------------------------------------------
# audit: full re-check of a committed chain (used by validators and tests)
# ---------------------------------------------------------------------------

def audit_referential_integrity(index: ChainIndex) -> list[str]:
    """Re-check every MAK->CUL and MER->MAK edge on a committed index."""
    problems = []
    for rec in index.records.values():
        expected_stage = {"MAK": "CUL", "MER": "MAK"}.get(rec.stage)
        for ref in rec.upstream_refs:
            target = index.records.get(ref)
            if target is None:
                problems.append(f"{rec.trace_id} references missing {ref}")
            elif target.stage != expected_stage:
                problems.append(f"{rec.trace_id} references wrong-stage {ref}")
    return problems


def validate_batch_envelope(env: dict, index: ChainIndex, registry,
                            batch_state: "BatchState") -> str | None:
    """What each validator re-checks per envelope in a proposed block.

    Returns a failure description or None. Checks run against the chain
    state *before* the block plus earlier envelopes of the same batch.
    """
    from .registry import require_valid_signature

    try:
        check_envelope_shape({k: env[k] for k in ("type", "body", "stakeholder_id", "signature")})
    except (MalformedEnvelope, KeyError) as exc:
        return f"malformed envelope: {exc}"
    etype = env["type"]
    try:
        require_valid_signature(registry, env)
    except Exception as exc:
        return f"envelope signature: {exc}"
    body = env["body"]
    try:
        if etype in STAGE_BY_TYPE:
            trace_id = env.get("trace_id")
            if not isinstance(trace_id, str) or not TRACE_ID_RE.match(trace_id):
                return "missing or malformed trace id"
            if not trace_id.startswith(STAGE_BY_TYPE[etype]):
                return "trace id stage does not match envelope type"
            if trace_id in index.records or trace_id in batch_state.trace_ids:
                return f"trace id {trace_id} already used"
            key = body_key(env["stakeholder_id"], body)
            if key in index.by_body_key or key in batch_state.body_keys:
                return "duplicate record body"
            if etype == "cultivator_record":
                validate_cultivator_body(body)
            elif etype == "maker_record":
                validate_maker_body(body, index)
            else:
                validate_merchant_body(body, index)
            batch_state.trace_ids.add(trace_id)
            batch_state.body_keys.add(key)
        elif etype == "confirmation":
            validate_confirmation_body(body)
            subject = index.records.get(body["subject_trace_id"])
            if subject is None:
                return f"confirmation subject {body['subject_trace_id']} not committed"
            role = registry.role_of(env["stakeholder_id"])
            if CONFIRMER_ROLE.get(subject.stage) != role:
                return "confirmer role is not downstream of subject stage"
            pair = (body["subject_trace_id"], env["stakeholder_id"])
            if pair in index.confirmations or pair in batch_state.confirmations:
                return "duplicate confirmation"
            batch_state.confirmations.add(pair)
        elif etype == "stakeholder_registration":
            validate_registration_body(body)
            if registry.role_of(env["stakeholder_id"]) != "admin":
                return "registration not signed by an admin"
            sid = body["stakeholder_id"]
            if sid in registry or sid in batch_state.stakeholder_ids:
                return f"stakeholder {sid} already registered"
            batch_state.stakeholder_ids.add(sid)
        elif etype == "qr_issuance":
            validate_issuance_body(body)
            subject = index.records.get(body["subject_trace_id"])
            if subject is None or subject.stage != "MER":
                return "issuance subject is not a committed merchant record"
            if registry.role_of(env["stakeholder_id"]) != "merchant":
                return "issuance not signed by a merchant"
    except (ValidationFailed, UnresolvedReference) as exc:
        return f"invalid {etype}: {exc.detail}"
    return None


@dataclass
class BatchState:
    """Intra-batch conflict tracking while validating one proposed block."""
    trace_ids: set[str] = field(default_factory=set)
    body_keys: set[str] = field(default_factory=set)
    confirmations: set[tuple[str, str]] = field(default_factory=set)
    stakeholder_ids: set[str] = field(default_factory=set)
