"""QR payload grammar, symbol rendering, and image decoding.

Wire contract: ``HT1|<MER trace id>|<8 hex integrity tag>``. The tag is the
first 8 hex chars of SHA-256("QR1|<trace_id>|<committing_block_hash>"), so a
label only verifies against the chain that committed the merchant record.
Symbols are ISO/IEC 18004 at error-correction level M with a 4-module quiet
zone, rendered to PNG.
"""

from __future__ import annotations

import hashlib
import io
import re
from dataclasses import dataclass
from datetime import date

import cv2
import numpy as np
from PIL import Image

from .errors import (
    DecodeFailed,
    IntegrityMismatch,
    MalformedPayload,
    NoQrFound,
    PayloadTooLong,
    UnknownTraceId,
    UnsupportedVersion,
)
from .ledger import Chain
from .records import ChainIndex
from .trace import trace as build_trace

PAYLOAD_VERSION = "HT1"
TAG_PREFIX = "QR1"

PAYLOAD_RE = re.compile(r"^HT1\|(MER)-[0-9A-HJKMNP-TV-Z]{8}\|[0-9a-f]{8}$")
_VERSION_RE = re.compile(r"^(HT\d+)\|")

MAX_RENDER_BYTES = 128
QUIET_ZONE_MODULES = 4
DEFAULT_MODULE_PIXELS = 10


@dataclass(frozen=True)
class QrPayload:
    trace_id: str
    integrity_tag: str
    version: str = PAYLOAD_VERSION


def integrity_tag(trace_id: str, committing_block_hash: str) -> str:
    preimage = f"{TAG_PREFIX}|{trace_id}|{committing_block_hash}".encode("utf-8")
    return hashlib.sha256(preimage).hexdigest()[:8]


def encode_payload(payload: QrPayload) -> str:
    return f"{payload.version}|{payload.trace_id}|{payload.integrity_tag}"


def parse_payload(text: str) -> QrPayload:
    """Strict grammar, no leniency: bad version and bad shape are distinct."""
    if not isinstance(text, str):
        raise MalformedPayload("payload must be a string")
    if not PAYLOAD_RE.match(text):
        m = _VERSION_RE.match(text)
        if m and m.group(1) != PAYLOAD_VERSION:
            raise UnsupportedVersion(f"payload version {m.group(1)!r} is not supported")
        raise MalformedPayload(f"payload {text!r} does not match the HT1 grammar")
    _, trace_id, tag = text.split("|")
    return QrPayload(trace_id=trace_id, integrity_tag=tag)


def render_qr(text: str, module_pixels: int = DEFAULT_MODULE_PIXELS) -> bytes:
    """PNG bytes for `text`; deterministic for fixed input and module size."""
    raw = text.encode("utf-8")
    if len(raw) > MAX_RENDER_BYTES:
        raise PayloadTooLong(f"payload is {len(raw)} bytes; limit {MAX_RENDER_BYTES}")
    params = cv2.QRCodeEncoder_Params()
    params.correction_level = cv2.QRCODE_ENCODER_CORRECT_LEVEL_M
    encoder = cv2.QRCodeEncoder_create(params)
    modules = encoder.encode(text)  # uint8 matrix, 0=dark 255=light
    n = modules.shape[0]
    canvas = np.full((n + 2 * QUIET_ZONE_MODULES, n + 2 * QUIET_ZONE_MODULES), 255, np.uint8)
    canvas[QUIET_ZONE_MODULES:QUIET_ZONE_MODULES + n,
           QUIET_ZONE_MODULES:QUIET_ZONE_MODULES + n] = modules
    pixels = np.kron(canvas, np.ones((module_pixels, module_pixels), np.uint8))
    buffer = io.BytesIO()
    Image.fromarray(pixels, mode="L").save(buffer, format="PNG")
    return buffer.getvalue()


def decode_qr(image_bytes: bytes) -> str:
    """Decoded payload string of the QR symbol in `image_bytes`.

    Tries the aruco-based detector first, then the classic one, each over a
    few rescales — crisp synthetic symbols occasionally defeat a single pass.
    """
    array = np.frombuffer(image_bytes, dtype=np.uint8)
    image = cv2.imdecode(array, cv2.IMREAD_GRAYSCALE)
    if image is None:
        raise DecodeFailed("image bytes could not be decoded")
    h, w = image.shape[:2]
    candidates = [image]
    if min(h, w) >= 2:
        candidates.append(cv2.resize(image, (w // 2, h // 2), interpolation=cv2.INTER_AREA))
        candidates.append(cv2.resize(image, (max(1, int(w * 0.75)), max(1, int(h * 0.75))),
                                     interpolation=cv2.INTER_AREA))
    candidates.append(cv2.resize(image, (w * 2, h * 2), interpolation=cv2.INTER_NEAREST))
    detected = False
    for detector in (cv2.QRCodeDetectorAruco(), cv2.QRCodeDetector()):
        for candidate in candidates:
            try:
                text, points, _ = detector.detectAndDecode(candidate)
            except cv2.error:
                continue
            if points is not None and len(points):
                detected = True
            if text:
                return text
    if detected:
        raise DecodeFailed("a QR symbol was found but could not be decoded")
    raise NoQrFound("no QR symbol found in image")


def verify_scanned(chain: Chain, payload: QrPayload, *,
                   index: ChainIndex | None = None,
                   query_date: date | None = None) -> dict:
    """Recompute the integrity tag from the chain; on match return the trace
    report, otherwise reject before exposing any trace data."""
    if index is None:
        index = ChainIndex.from_chain(chain)
    record = index.records.get(payload.trace_id)
    if record is None:
        raise UnknownTraceId(f"trace id {payload.trace_id} is not committed")
    committing_hash = chain.blocks[record.height].hash
    expected = integrity_tag(payload.trace_id, committing_hash)
    if payload.integrity_tag != expected:
        raise IntegrityMismatch("integrity tag does not match the committed record")
    return build_trace(chain, payload.trace_id, index=index, query_date=query_date)
