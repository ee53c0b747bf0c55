"""Domain error taxonomy shared by every module and mapped 1:1 onto HTTP codes."""

from __future__ import annotations


class HalalTraceError(Exception):
    """Base class; `code` is the stable machine-readable identifier."""

    code = "internal_error"

    def __init__(self, detail: str = "", *, field: str | None = None):
        super().__init__(detail or self.code)
        self.detail = detail or self.code
        self.field = field

    def to_dict(self) -> dict:
        body = {"code": self.code, "detail": self.detail}
        if self.field is not None:
            body["field"] = self.field
        return body


# --- ledger ---

class BadLinkage(HalalTraceError):
    code = "bad_linkage"

class BadHeight(HalalTraceError):
    code = "bad_height"

class BadTimestamp(HalalTraceError):
    code = "bad_timestamp"

class BadHash(HalalTraceError):
    code = "bad_hash"

class BadSignature(HalalTraceError):
    code = "bad_signature"


# --- consensus ---

class EmptyRegistry(HalalTraceError):
    code = "empty_registry"

class InvalidConfig(HalalTraceError):
    code = "invalid_config"


# --- registry / access control ---

class Unauthorized(HalalTraceError):
    code = "unauthorized"

class DuplicateId(HalalTraceError):
    code = "duplicate_id"

class UnknownStakeholder(HalalTraceError):
    code = "unknown_stakeholder"


# --- records ---

class ValidationFailed(HalalTraceError):
    code = "validation_failed"

class UnresolvedReference(HalalTraceError):
    code = "unresolved_reference"

class DuplicateSubmission(HalalTraceError):
    code = "duplicate_submission"

class MalformedEnvelope(HalalTraceError):
    code = "malformed_envelope"

class UnknownSubject(HalalTraceError):
    code = "unknown_subject"

class WrongStage(HalalTraceError):
    code = "wrong_stage"

class AlreadyConfirmed(HalalTraceError):
    code = "already_confirmed"


# --- trace / qr ---

class UnknownTraceId(HalalTraceError):
    code = "unknown_trace_id"

class MalformedId(HalalTraceError):
    code = "malformed_id"

class IncompleteProvenance(HalalTraceError):
    code = "incomplete_provenance"

class MalformedPayload(HalalTraceError):
    code = "malformed_payload"

class UnsupportedVersion(HalalTraceError):
    code = "unsupported_version"

class PayloadTooLong(HalalTraceError):
    code = "payload_too_long"

class NoQrFound(HalalTraceError):
    code = "no_qr_found"

class DecodeFailed(HalalTraceError):
    code = "decode_failed"

class IntegrityMismatch(HalalTraceError):
    code = "integrity_mismatch"


# --- node ---

class ConfigError(HalalTraceError):
    code = "config_error"

class CorruptLog(HalalTraceError):
    code = "corrupt_log"


# One documented HTTP status per error code; the API layer and its parity
# test both read from this table.
HTTP_STATUS = {
    "bad_signature": 401,
    "unknown_stakeholder": 401,
    "unauthorized": 403,
    "unknown_trace_id": 404,
    "malformed_id": 404,
    "unknown_subject": 404,
    "duplicate_id": 409,
    "already_confirmed": 409,
    "incomplete_provenance": 409,
    "malformed_envelope": 400,
    "validation_failed": 422,
    "unresolved_reference": 422,
    "duplicate_submission": 422,
    "wrong_stage": 422,
    "malformed_payload": 422,
    "unsupported_version": 422,
    "payload_too_long": 422,
    "no_qr_found": 422,
    "decode_failed": 422,
    "integrity_mismatch": 422,
}
