"""Long-running node: pending pool, consensus round driver, append-only
persistence, and the HTTP adapter over every module operation.

Concurrency contract: all chain/pool/registry mutations run under one writer
lock; committed blocks are persisted (write+flush+fsync) before they become
visible, so no reader ever observes a partially appended block and any
crash leaves a loadable line-delimited prefix.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from .canonical import canonical_bytes, sha256_hex
from .consensus import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_ROUND_TIMER_SECONDS,
    StakeRegistry,
    Validator,
    run_round,
)
from .errors import (
    AlreadyConfirmed,
    ConfigError,
    CorruptLog,
    DuplicateId,
    DuplicateSubmission,
    HalalTraceError,
    MalformedEnvelope,
    Unauthorized,
    UnknownSubject,
    WrongStage,
)
from .identity import load_or_create_key, public_key_hex, read_key_file
from .ledger import Block, Chain, ValidationResult, create_genesis, validate_chain
from .qr import QrPayload, encode_payload, integrity_tag, render_qr
from .records import (
    CONFIRMER_ROLE,
    CONFIRM_ACTION,
    STAGE_BY_TYPE,
    ChainIndex,
    body_key,
    check_envelope_shape,
    envelope_key,
    fresh_trace_id,
    validate_confirmation_body,
    validate_cultivator_body,
    validate_issuance_body,
    validate_maker_body,
    validate_merchant_body,
    validate_registration_body,
)
from .registry import (
    StakeholderIdentity,
    StakeholderRegistry,
    identity_from_registration_body,
    require,
    require_valid_signature,
)
from .trace import require_issuable, trace as build_trace

log = logging.getLogger("halaltrace.node")

LOG_FILENAME = "blocks.log"
DATA_DIR_ENV = "HALALTRACE_DATA_DIR"

_SUBMIT_ACTION = {
    "cultivator_record": "submit_cultivator_record",
    "maker_record": "submit_maker_record",
    "merchant_record": "submit_merchant_record",
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidatorSpec:
    validator_id: str
    stake: int
    key_file: Path | None = None


@dataclass(frozen=True)
class NodeConfig:
    data_dir: Path
    admin_id: str
    admin_public_key: str
    validators: tuple[ValidatorSpec, ...]
    listen_host: str = "127.0.0.1"
    listen_port: int = 8470
    round_timer_seconds: float = DEFAULT_ROUND_TIMER_SECONDS
    batch_size: int = DEFAULT_BATCH_SIZE
    auto_rounds: bool = True
    ui_dir: Path | None = None

    def check(self) -> None:
        if self.round_timer_seconds <= 0:
            raise ConfigError("round_timer_seconds must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.validators:
            raise ConfigError("at least one validator is required")
        if any(v.stake < 1 for v in self.validators):
            raise ConfigError("every validator stake must be >= 1")
        if len({v.validator_id for v in self.validators}) != len(self.validators):
            raise ConfigError("validator ids must be unique")
        if not self.admin_id:
            raise ConfigError("admin_id is required")
        try:
            bytes.fromhex(self.admin_public_key)
        except ValueError:
            raise ConfigError("admin_public_key must be hex") from None
        if len(self.admin_public_key) != 64:
            raise ConfigError("admin_public_key must be 64 hex chars")


_KNOWN_KEYS = {
    "listen_addr", "data_dir", "round_timer_seconds", "batch_size",
    "admin_id", "admin_public_key", "auto_rounds", "ui_dir",
}


def parse_config(path: str | Path) -> NodeConfig:
    """Parse the `key = value` config file format (see docs/config.md)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    values: dict[str, str] = {}
    validators: dict[str, dict[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("validator."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in ("stake", "key_file"):
                raise ConfigError(f"line {lineno}: unknown validator key {key!r}")
            validators.setdefault(parts[1], {})[parts[2]] = value
        elif key in _KNOWN_KEYS:
            values[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    for required in ("data_dir", "admin_id", "admin_public_key"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")

    listen_host, listen_port = "127.0.0.1", 8470
    if "listen_addr" in values:
        addr = values["listen_addr"]
        if ":" not in addr:
            raise ConfigError("listen_addr must be host:port")
        listen_host, port_text = addr.rsplit(":", 1)
        try:
            listen_port = int(port_text)
        except ValueError:
            raise ConfigError("listen_addr port must be an integer") from None

    specs = []
    for vid in sorted(validators):
        spec = validators[vid]
        if "stake" not in spec:
            raise ConfigError(f"validator.{vid}.stake is required")
        try:
            stake = int(spec["stake"])
        except ValueError:
            raise ConfigError(f"validator.{vid}.stake must be an integer") from None
        key_file = Path(spec["key_file"]) if "key_file" in spec else None
        specs.append(ValidatorSpec(vid, stake, key_file))

    data_dir = Path(os.environ.get(DATA_DIR_ENV) or values["data_dir"])

    def _float(key: str, default: float) -> float:
        try:
            return float(values.get(key, default))
        except ValueError:
            raise ConfigError(f"{key} must be a number") from None

    config = NodeConfig(
        data_dir=data_dir,
        admin_id=values["admin_id"],
        admin_public_key=values["admin_public_key"],
        validators=tuple(specs),
        listen_host=listen_host,
        listen_port=listen_port,
        round_timer_seconds=_float("round_timer_seconds", DEFAULT_ROUND_TIMER_SECONDS),
        batch_size=int(_float("batch_size", DEFAULT_BATCH_SIZE)),
        auto_rounds=values.get("auto_rounds", "true").lower() != "false",
        ui_dir=Path(values["ui_dir"]) if "ui_dir" in values else None,
    )
    config.check()
    return config


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def load_chain(data_dir: str | Path) -> Chain:
    """Rebuild the chain from the append-only log.

    Empty or missing log yields a genesis-only chain. A final line without a
    trailing newline is a torn write: it is truncated away with a warning.
    Anything else that fails to parse or validate refuses to load.
    """
    path = Path(data_dir) / LOG_FILENAME
    if not path.exists():
        return Chain()
    data = path.read_bytes()
    if not data:
        return Chain()
    if not data.endswith(b"\n"):
        cut = data.rfind(b"\n") + 1
        dropped = data[cut:]
        log.warning("dropping torn final log line (%d bytes): %r", len(dropped), dropped[:80])
        with open(path, "r+b") as fh:
            fh.truncate(cut)
        data = data[:cut]
        if not data:
            return Chain()
    try:
        lines = data.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise CorruptLog(f"log is not valid UTF-8: {exc}") from None
    blocks: list[Block] = []
    for i, line in enumerate(lines):
        try:
            blocks.append(Block.from_dict(json.loads(line)))
        except (json.JSONDecodeError, ValueError) as exc:
            raise CorruptLog(f"line {i + 1}: {exc}: {line[:120]!r}") from None
    chain = Chain(blocks=blocks)
    result = validate_chain(chain)
    if not result.ok:
        raise CorruptLog(f"height {result.height}: {result.reason}")
    return chain


def persist_block(data_dir: str | Path, block: Block) -> int:
    """Append one canonical line; durable (flush+fsync) before returning."""
    path = Path(data_dir) / LOG_FILENAME
    line = block.to_json_line() + "\n"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line)
        fh.flush()
        os.fsync(fh.fileno())
    return len(line.encode("utf-8"))


# ---------------------------------------------------------------------------
# pending pool
# ---------------------------------------------------------------------------

@dataclass
class PendingPool:
    """FIFO queue of validated envelopes awaiting commitment."""

    entries: list[dict] = field(default_factory=list)
    envelope_keys: set[str] = field(default_factory=set)
    body_keys: dict[str, dict] = field(default_factory=dict)  # body_key -> envelope
    confirmations: set[tuple[str, str]] = field(default_factory=set)
    registrations: set[str] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, envelope: dict) -> None:
        self.entries.append(envelope)
        self.envelope_keys.add(envelope_key(envelope))
        if envelope["type"] in STAGE_BY_TYPE:
            self.body_keys[body_key(envelope["stakeholder_id"], envelope["body"])] = envelope
        elif envelope["type"] == "confirmation":
            self.confirmations.add((envelope["body"]["subject_trace_id"], envelope["stakeholder_id"]))
        elif envelope["type"] == "stakeholder_registration":
            self.registrations.add(envelope["body"]["stakeholder_id"])

    def pop_committed(self, count: int) -> None:
        committed, self.entries = self.entries[:count], self.entries[count:]
        for envelope in committed:
            self.envelope_keys.discard(envelope_key(envelope))
            if envelope["type"] in STAGE_BY_TYPE:
                self.body_keys.pop(body_key(envelope["stakeholder_id"], envelope["body"]), None)
            elif envelope["type"] == "confirmation":
                self.confirmations.discard(
                    (envelope["body"]["subject_trace_id"], envelope["stakeholder_id"]))
            elif envelope["type"] == "stakeholder_registration":
                self.registrations.discard(envelope["body"]["stakeholder_id"])

    def trace_ids(self) -> set[str]:
        return {e["trace_id"] for e in self.entries if "trace_id" in e}


# ---------------------------------------------------------------------------
# service
# ---------------------------------------------------------------------------

class NodeService:
    """Owns the chain, pool, registry, and round driver for one node."""

    def __init__(self, config: NodeConfig, clock=None):
        config.check()
        self.config = config
        self.clock = clock or (lambda: int(time.time()))
        self.started = time.monotonic()

        self.data_dir = Path(config.data_dir)
        try:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            probe = self.data_dir / ".writable"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"data directory not writable: {exc}") from None

        self.signing_keys = {}
        validators = []
        for spec in config.validators:
            key_path = spec.key_file or (self.data_dir / "validator_keys" / f"{spec.validator_id}.key")
            key = load_or_create_key(key_path)
            self.signing_keys[spec.validator_id] = key
            validators.append(Validator(spec.validator_id, public_key_hex(key), spec.stake))
        self.stake_registry = StakeRegistry(validators)

        self.chain = load_chain(self.data_dir)
        log_path = self.data_dir / LOG_FILENAME
        if not log_path.exists() or log_path.stat().st_size == 0:
            persist_block(self.data_dir, create_genesis())
        result = validate_chain(self.chain, key_resolver=self.stake_registry.public_key_of)
        if not result.ok:
            raise CorruptLog(f"height {result.height}: {result.reason}")

        try:
            self.index = ChainIndex.from_chain(self.chain)
            self.registry = StakeholderRegistry()
            self.registry.add(StakeholderIdentity(
                stakeholder_id=config.admin_id,
                role="admin",
                public_key_hex=config.admin_public_key,
                display_name="Bootstrap Admin",
                contact="",
            ))
            for reg in self.index.registrations:
                body = {k: v for k, v in reg.items() if k != "height"}
                self.registry.add(identity_from_registration_body(body))
        except CorruptLog:
            raise
        except Exception as exc:
            raise CorruptLog(f"committed envelopes do not replay: {exc}") from None

        self.pool = PendingPool()
        self._lock = threading.RLock()
        self._next_round = self.chain.height + 1
        self._round_event = threading.Event()
        self._stop = threading.Event()
        self._driver: threading.Thread | None = None
        if config.auto_rounds:
            self._driver = threading.Thread(target=self._drive, name="round-driver", daemon=True)
            self._driver.start()

    # -- lifecycle ---------------------------------------------------------

    def _drive(self) -> None:
        while not self._stop.is_set():
            self._round_event.wait(timeout=self.config.round_timer_seconds)
            self._round_event.clear()
            if self._stop.is_set():
                return
            if self.pool.entries:
                try:
                    self.run_round_now()
                except Exception:  # driver must survive; operators read the log
                    log.exception("round failed")

    def shutdown(self) -> None:
        self._stop.set()
        self._round_event.set()
        if self._driver is not None:
            self._driver.join(timeout=5)

    # -- consensus ---------------------------------------------------------

    def run_round_now(self):
        """Run one consensus round over the current pool (test hook and
        driver entry point)."""
        with self._lock:
            round_no = self._next_round
            self._next_round += 1
            outcome = run_round(
                self.stake_registry, self.signing_keys, self.chain, self.index,
                self.registry, self.pool.entries, round_no, self.clock,
                batch_size=self.config.batch_size,
                pre_commit=lambda block: persist_block(self.data_dir, block),
            )
            if outcome.committed:
                self.pool.pop_committed(len(outcome.block.payload))
                for env in outcome.block.payload:
                    if env["type"] == "stakeholder_registration":
                        self.registry.add(identity_from_registration_body(env["body"]))
            elif outcome.reason not in ("empty",):
                log.warning("round %d rejected: %s", round_no, outcome.reason)
            return outcome

    def _maybe_trigger_round(self) -> None:
        if len(self.pool) >= self.config.batch_size:
            self._round_event.set()

    # -- submissions -------------------------------------------------------

    def submit_record(self, kind: str, envelope: dict) -> tuple[str, str]:
        """Admit a stage record; returns (trace_id, status) where status is
        `pending` for fresh/queued and `committed` for idempotent replays of
        already-committed bodies."""
        check_envelope_shape(envelope)
        expected_type = f"{kind}_record"
        if envelope["type"] != expected_type:
            raise MalformedEnvelope(
                f"envelope type {envelope['type']!r} does not match endpoint ({expected_type})")
        require_valid_signature(self.registry, envelope)
        require(self.registry.authorize(envelope["stakeholder_id"], _SUBMIT_ACTION[envelope["type"]]))
        stage = STAGE_BY_TYPE[envelope["type"]]
        body = envelope["body"]
        with self._lock:
            key = body_key(envelope["stakeholder_id"], body)
            pending = self.pool.body_keys.get(key)
            if pending is not None:
                if pending["signature"] != envelope["signature"]:
                    raise DuplicateSubmission("identical body already pending under a different signature")
                return pending["trace_id"], "pending"
            committed_id = self.index.by_body_key.get(key)
            if committed_id is not None:
                committed = self.index.records[committed_id]
                if committed.signature != envelope["signature"]:
                    raise DuplicateSubmission("identical body already committed under a different signature")
                return committed_id, "committed"
            if stage == "CUL":
                validate_cultivator_body(body)
            elif stage == "MAK":
                validate_maker_body(body, self.index)
            else:
                validate_merchant_body(body, self.index)
            taken = set(self.index.records) | self.pool.trace_ids()
            trace_id = fresh_trace_id(stage, taken)
            self.pool.add({**envelope, "trace_id": trace_id})
            self._maybe_trigger_round()
            return trace_id, "pending"

    def confirm_record(self, envelope: dict) -> dict:
        check_envelope_shape(envelope)
        if envelope["type"] != "confirmation":
            raise MalformedEnvelope("expected a confirmation envelope")
        require_valid_signature(self.registry, envelope)
        role = self.registry.role_of(envelope["stakeholder_id"])
        if role not in set(CONFIRMER_ROLE.values()):
            raise Unauthorized(f"role {role!r} holds no confirmation rights")
        validate_confirmation_body(envelope["body"])
        subject_id = envelope["body"]["subject_trace_id"]
        with self._lock:
            subject = self.index.records.get(subject_id)
            if subject is None:
                raise UnknownSubject(f"subject {subject_id} is not committed")
            required_role = CONFIRMER_ROLE.get(subject.stage)
            if required_role is None or role != required_role:
                raise WrongStage(
                    f"{role} cannot confirm a {subject.stage}-stage record")
            require(self.registry.authorize(envelope["stakeholder_id"],
                                            CONFIRM_ACTION[subject.stage]))
            pair = (subject_id, envelope["stakeholder_id"])
            if pair in self.index.confirmations or pair in self.pool.confirmations:
                raise AlreadyConfirmed(f"{envelope['stakeholder_id']} already confirmed {subject_id}")
            self.pool.add(dict(envelope))
            self._maybe_trigger_round()
            return {"accepted": True, "subject_trace_id": subject_id}

    def register_stakeholder(self, envelope: dict) -> str:
        check_envelope_shape(envelope)
        if envelope["type"] != "stakeholder_registration":
            raise MalformedEnvelope("expected a stakeholder_registration envelope")
        require_valid_signature(self.registry, envelope)
        require(self.registry.authorize(envelope["stakeholder_id"], "register_stakeholder"))
        validate_registration_body(envelope["body"])
        identity_from_registration_body(envelope["body"])  # key must parse
        new_id = envelope["body"]["stakeholder_id"]
        with self._lock:
            if new_id in self.registry or new_id in self.pool.registrations:
                raise DuplicateId(f"stakeholder {new_id!r} already registered")
            self.pool.add(dict(envelope))
            self._maybe_trigger_round()
            return new_id

    def issue_qr(self, envelope: dict) -> tuple[str, bytes]:
        """Gate, mint the payload, queue the issuance event, render the PNG."""
        check_envelope_shape(envelope)
        if envelope["type"] != "qr_issuance":
            raise MalformedEnvelope("expected a qr_issuance envelope")
        require_valid_signature(self.registry, envelope)
        require(self.registry.authorize(envelope["stakeholder_id"], "issue_qr"))
        validate_issuance_body(envelope["body"])
        subject_id = envelope["body"]["subject_trace_id"]
        with self._lock:
            record = require_issuable(self.chain, subject_id, self.index)
            committing_hash = self.chain.blocks[record.height].hash
            payload = QrPayload(subject_id, integrity_tag(subject_id, committing_hash))
            if envelope_key(envelope) not in self.pool.envelope_keys:
                self.pool.add(dict(envelope))
                self._maybe_trigger_round()
        text = encode_payload(payload)
        return text, render_qr(text)

    # -- reads ---------------------------------------------------------------

    def trace(self, trace_id: str) -> dict:
        with self._lock:
            return build_trace(self.chain, trace_id, index=self.index)

    def verify_payload(self, text: str) -> dict:
        from .qr import parse_payload, verify_scanned
        payload = parse_payload(text)
        with self._lock:
            return verify_scanned(self.chain, payload, index=self.index)

    def verify_image(self, image_bytes: bytes) -> dict:
        from .qr import decode_qr
        return self.verify_payload(decode_qr(image_bytes))

    def get_block(self, height: int) -> Block | None:
        if 0 <= height < len(self.chain.blocks):
            return self.chain.blocks[height]
        return None

    def validate(self) -> ValidationResult:
        with self._lock:
            return validate_chain(self.chain, key_resolver=self.stake_registry.public_key_of)

    def health(self) -> dict:
        return {
            "height": self.chain.height,
            "pending": len(self.pool),
            "uptime_seconds": int(time.monotonic() - self.started),
        }


# ---------------------------------------------------------------------------
# HTTP adapter
# ---------------------------------------------------------------------------

def create_app(service: NodeService) -> FastAPI:
    from .errors import HTTP_STATUS

    app = FastAPI(title="halaltrace node", docs_url=None, redoc_url=None)
    app.state.service = service
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    @app.exception_handler(HalalTraceError)
    async def _domain_error(_request, exc: HalalTraceError):
        return JSONResponse(status_code=HTTP_STATUS.get(exc.code, 500), content=exc.to_dict())

    async def _json_body(request: Request) -> dict:
        try:
            return json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise MalformedEnvelope("request body is not valid JSON") from None

    @app.post("/api/v1/records/{kind}")
    async def submit_record(kind: str, request: Request):
        if kind not in ("cultivator", "maker", "merchant"):
            return JSONResponse(status_code=404, content={"code": "not_found", "detail": kind})
        envelope = await _json_body(request)
        trace_id, status = service.submit_record(kind, envelope)
        return JSONResponse(status_code=202, content={"trace_id": trace_id, "status": status})

    @app.post("/api/v1/records/{trace_id}/confirm")
    async def confirm(trace_id: str, request: Request):
        envelope = await _json_body(request)
        if isinstance(envelope.get("body"), dict) and \
                envelope["body"].get("subject_trace_id") != trace_id:
            raise MalformedEnvelope("subject_trace_id does not match the URL trace id")
        return JSONResponse(status_code=202, content=service.confirm_record(envelope))

    @app.get("/api/v1/trace/{trace_id}")
    async def get_trace(trace_id: str):
        return service.trace(trace_id)

    @app.post("/api/v1/products/{trace_id}/qr")
    async def product_qr(trace_id: str, request: Request):
        envelope = await _json_body(request)
        if isinstance(envelope.get("body"), dict) and \
                envelope["body"].get("subject_trace_id") != trace_id:
            raise MalformedEnvelope("subject_trace_id does not match the URL trace id")
        text, png = service.issue_qr(envelope)
        return Response(content=png, media_type="image/png",
                        headers={"X-Qr-Payload": text})

    @app.post("/api/v1/qr/verify")
    async def qr_verify(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("application/json"):
            doc = await _json_body(request)
            payload = doc.get("payload")
            if not isinstance(payload, str):
                raise MalformedEnvelope('expected {"payload": "<HT1 string>"}')
            return service.verify_payload(payload)
        return service.verify_image(await request.body())

    @app.get("/api/v1/chain/blocks/{height}")
    async def chain_block(height: int):
        block = service.get_block(height)
        if block is None:
            return JSONResponse(status_code=404,
                                content={"code": "unknown_height", "detail": str(height)})
        return block.to_dict()

    @app.get("/api/v1/chain/tip")
    async def chain_tip():
        return service.chain.tip.to_dict()

    @app.get("/api/v1/chain/validate")
    async def chain_validate():
        return service.validate().to_dict()

    @app.post("/api/v1/stakeholders")
    async def stakeholders(request: Request):
        envelope = await _json_body(request)
        stakeholder_id = service.register_stakeholder(envelope)
        return JSONResponse(status_code=201,
                            content={"stakeholder_id": stakeholder_id, "status": "pending"})

    @app.get("/api/v1/health")
    async def health():
        return service.health()

    ui_dir = service.config.ui_dir
    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(config: NodeConfig) -> None:
    """Blocking entry point: build the service and run uvicorn."""
    import uvicorn

    service = NodeService(config)
    app = create_app(service)
    try:
        uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="warning")
    finally:
        service.shutdown()
