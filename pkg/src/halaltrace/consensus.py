"""Stake-weighted deterministic proposer selection and the simulated
multi-validator round harness.

Selection rule: seed = SHA-256("POS1|<previous_hash>|<round>"), r = seed mod
total stake, then walk validators in ascending id order accumulating stake
and take the first whose cumulative stake exceeds r. Enumerating r over
0..total-1 hands each validator exactly `stake` wins, so proportionality is
exact over residues and statistical over hash seeds.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from . import ledger
from .canonical import canonical_dumps
from .errors import EmptyRegistry, InvalidConfig
from .identity import public_key_from_hex, public_key_hex, sign_hex, verify_hex
from .ledger import Block, Chain, compute_block_hash
from .records import BatchState, ChainIndex, fresh_trace_id, validate_batch_envelope
from .registry import StakeholderIdentity, StakeholderRegistry

SEED_PREFIX = "POS1"

DEFAULT_BATCH_SIZE = 100
DEFAULT_ROUND_TIMER_SECONDS = 5.0


@dataclass(frozen=True)
class Validator:
    validator_id: str
    public_key_hex: str
    stake: int


class StakeRegistry:
    def __init__(self, validators: Sequence[Validator] = ()):
        self._validators: dict[str, Validator] = {}
        for v in validators:
            self.add(v)

    def add(self, validator: Validator) -> None:
        if validator.stake < 1:
            raise InvalidConfig(f"validator {validator.validator_id} needs stake >= 1")
        if validator.validator_id in self._validators:
            raise InvalidConfig(f"duplicate validator id {validator.validator_id!r}")
        self._validators[validator.validator_id] = validator

    def get(self, validator_id: str) -> Validator | None:
        return self._validators.get(validator_id)

    def ordered(self) -> list[Validator]:
        return [self._validators[k] for k in sorted(self._validators)]

    @property
    def total_stake(self) -> int:
        return sum(v.stake for v in self._validators.values())

    def __len__(self) -> int:
        return len(self._validators)

    def public_key_of(self, validator_id: str):
        v = self._validators.get(validator_id)
        return public_key_from_hex(v.public_key_hex) if v else None


def selection_seed(previous_hash: str, round_no: int) -> str:
    preimage = f"{SEED_PREFIX}|{previous_hash}|{round_no}".encode("utf-8")
    return hashlib.sha256(preimage).hexdigest()


def winner_for_residue(registry: StakeRegistry, residue: int) -> str:
    """First validator (ascending id) whose cumulative stake exceeds `residue`."""
    acc = 0
    for validator in registry.ordered():
        acc += validator.stake
        if acc > residue:
            return validator.validator_id
    raise AssertionError("unreachable: cumulative stake must cover every residue")


def select_proposer(registry: StakeRegistry, previous_hash: str, round_no: int) -> str:
    total = registry.total_stake
    if total < 1:
        raise EmptyRegistry("no stake registered")
    return winner_for_residue(
        registry, int(selection_seed(previous_hash, round_no), 16) % total)


def propose_block(chain: Chain, proposer_id: str, signing_key: Ed25519PrivateKey,
                  batch: Sequence[dict], timestamp: int) -> Block:
    tip = chain.tip
    timestamp = max(int(timestamp), tip.timestamp)
    pd = ledger.payload_digest(batch)
    block_hash = compute_block_hash(tip.height + 1, timestamp, pd, tip.hash, proposer_id)
    return Block(
        height=tip.height + 1,
        timestamp=timestamp,
        payload=tuple(batch),
        payload_digest=pd,
        previous_hash=tip.hash,
        hash=block_hash,
        proposer_id=proposer_id,
        proposer_signature=sign_hex(signing_key, block_hash.encode("utf-8")),
    )


def verify_block(chain: Chain, block: Block, stake_registry: StakeRegistry,
                 round_no: int, index: ChainIndex,
                 registry: StakeholderRegistry) -> str | None:
    """One honest validator's verdict on a proposed block; None means accept.

    Envelope checks run against the chain state before the block, plus
    earlier envelopes in the same batch.
    """
    tip = chain.tip
    if block.previous_hash != tip.hash:
        return "bad_linkage"
    if block.height != tip.height + 1:
        return "bad_height"
    if block.timestamp < tip.timestamp:
        return "bad_timestamp"
    if block.payload_digest != ledger.payload_digest(block.payload):
        return "payload_digest_mismatch"
    expected = compute_block_hash(block.height, block.timestamp, block.payload_digest,
                                  block.previous_hash, block.proposer_id)
    if block.hash != expected:
        return "hash_mismatch"
    if block.proposer_id != select_proposer(stake_registry, tip.hash, round_no):
        return "wrong_proposer"
    public_key = stake_registry.public_key_of(block.proposer_id)
    if public_key is None:
        return "unknown_proposer"
    if block.proposer_signature is None or not verify_hex(
            public_key, block.proposer_signature, block.hash.encode("utf-8")):
        return "bad_signature"
    if not block.payload:
        return "empty_payload"
    batch_state = BatchState()
    for env in block.payload:
        problem = validate_batch_envelope(env, index, registry, batch_state)
        if problem:
            return f"invalid_record: {problem}"
    return None


@dataclass(frozen=True)
class RoundOutcome:
    round_no: int
    seed: str
    proposer_id: str
    status: str  # "committed" | "rejected"
    block: Block | None = None
    reason: str | None = None

    @property
    def committed(self) -> bool:
        return self.status == "committed"


ProposerFn = Callable[[Chain, str, Sequence[dict], int], Block]


def run_round(stake_registry: StakeRegistry, signing_keys: dict[str, Ed25519PrivateKey],
              chain: Chain, index: ChainIndex, registry: StakeholderRegistry,
              pending: Sequence[dict], round_no: int, clock: Callable[[], int],
              batch_size: int = DEFAULT_BATCH_SIZE,
              proposer_fn: ProposerFn | None = None,
              pre_commit: Callable[[Block], None] | None = None) -> RoundOutcome:
    """Select, propose, verify with every validator, and commit on unanimity.

    `proposer_fn` lets tests substitute a byzantine proposer; the honest
    default signs with the selected validator's key. On commit `pre_commit`
    (persistence) runs first, then the block is appended to `chain` and
    applied to `index`.
    """
    if stake_registry.total_stake < 1:
        raise EmptyRegistry("no stake registered")
    tip_hash = chain.tip.hash
    seed = selection_seed(tip_hash, round_no)
    proposer_id = select_proposer(stake_registry, tip_hash, round_no)
    if not pending:
        return RoundOutcome(round_no, seed, proposer_id, "rejected", reason="empty")
    batch = list(pending[:batch_size])
    if proposer_fn is None:
        key = signing_keys.get(proposer_id)
        if key is None:
            return RoundOutcome(round_no, seed, proposer_id, "rejected",
                                reason="proposer_offline")
        block = propose_block(chain, proposer_id, key, batch, clock())
    else:
        block = proposer_fn(chain, proposer_id, batch, clock())
    for _ in stake_registry.ordered():
        verdict = verify_block(chain, block, stake_registry, round_no, index, registry)
        if verdict is not None:
            return RoundOutcome(round_no, seed, proposer_id, "rejected", reason=verdict)
    if pre_commit is not None:
        pre_commit(block)
    ledger.append_block(chain, block, key_resolver=stake_registry.public_key_of)
    index.apply_block(block)
    return RoundOutcome(round_no, seed, proposer_id, "committed", block=block)


# ---------------------------------------------------------------------------
# deterministic simulation harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    validators: dict[str, int]
    rounds: int
    records_per_round: int = 0
    drop_rate: float = 0.0
    rng_seed: int = 0
    batch_size: int = DEFAULT_BATCH_SIZE

    def check(self) -> None:
        if not self.validators:
            raise InvalidConfig("at least one validator required")
        if any(s < 1 for s in self.validators.values()):
            raise InvalidConfig("every stake must be >= 1")
        if self.rounds < 1:
            raise InvalidConfig("rounds must be >= 1")
        if self.records_per_round < 0:
            raise InvalidConfig("records_per_round must be >= 0")
        if not (0.0 <= self.drop_rate <= 1.0):
            raise InvalidConfig("drop_rate must be within [0, 1]")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")


@dataclass
class SimulationReport:
    rounds: int
    committed: int
    rejected: int
    per_validator_counts: dict[str, int]
    committed_by_validator: dict[str, int]
    proposer_frequency: dict[str, str]  # fixed 6-decimal strings, always canonical
    tip_height: int
    tip_hash: str
    rng_seed: int

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "committed": self.committed,
            "rejected": self.rejected,
            "per_validator_counts": self.per_validator_counts,
            "committed_by_validator": self.committed_by_validator,
            "proposer_frequency": self.proposer_frequency,
            "tip_height": self.tip_height,
            "tip_hash": self.tip_hash,
            "rng_seed": self.rng_seed,
        }

    def to_json(self) -> str:
        return canonical_dumps(self.to_dict())


def _derived_key(label: str, rng_seed: int, name: str) -> Ed25519PrivateKey:
    seed = hashlib.sha256(f"{label}|{rng_seed}|{name}".encode("utf-8")).digest()
    return Ed25519PrivateKey.from_private_bytes(seed)


def _synthetic_cultivator_body(round_no: int, i: int, now: int) -> dict:
    return {
        "facility": {
            "name": f"Sim Farm {i}",
            "latitude": 24.7,
            "longitude": 46.7,
            "manager_contact": "sim@example.test",
        },
        "raw_material_type": "agricultural_produce",
        "husbandry_practices": "simulated",
        "harvest_processing_description": "simulated",
        "certification": {
            "cert_number": f"SIM-{round_no}-{i}",
            "issuing_body": "Sim Cert Body",
            "valid_from": "2020-01-01",
            "valid_to": "2099-12-31",
        },
        "batch_lot": f"LOT-{round_no}-{i}",
        "recorded_at": now,
    }


def simulate(config: SimulationConfig) -> SimulationReport:
    """Deterministic multi-round consensus run; same seed, same report bytes."""
    from .canonical import canonical_bytes
    from .identity import sign_hex as _sign

    config.check()
    rng = random.Random(config.rng_seed)
    keys = {vid: _derived_key("sim-validator", config.rng_seed, vid)
            for vid in config.validators}
    stake_registry = StakeRegistry([
        Validator(vid, public_key_hex(keys[vid]), stake)
        for vid, stake in sorted(config.validators.items())
    ])

    registry = StakeholderRegistry()
    cultivator_key = _derived_key("sim-cultivator", config.rng_seed, "c0")
    registry.add(StakeholderIdentity(
        stakeholder_id="sim-cultivator",
        role="cultivator",
        public_key_hex=public_key_hex(cultivator_key),
        display_name="Simulated Cultivator",
        contact="sim@example.test",
    ))

    chain = Chain()
    index = ChainIndex.from_chain(chain)
    pending: list[dict] = []
    taken: set[str] = set()
    now = 1_700_000_000

    selections: dict[str, int] = {vid: 0 for vid in config.validators}
    commits: dict[str, int] = {vid: 0 for vid in config.validators}
    committed = rejected = 0

    for round_no in range(1, config.rounds + 1):
        now += 1
        for i in range(config.records_per_round):
            body = _synthetic_cultivator_body(round_no, i, now)
            tid = fresh_trace_id("CUL", taken, rng)
            taken.add(tid)
            pending.append({
                "type": "cultivator_record",
                "body": body,
                "stakeholder_id": "sim-cultivator",
                "signature": _sign(cultivator_key, canonical_bytes(body)),
                "trace_id": tid,
            })
        offline = rng.random() < config.drop_rate
        if offline:
            proposer = select_proposer(stake_registry, chain.tip.hash, round_no)
            selections[proposer] += 1
            rejected += 1
            continue
        outcome = run_round(stake_registry, keys, chain, index, registry,
                            pending, round_no, lambda: now,
                            batch_size=config.batch_size)
        selections[outcome.proposer_id] += 1
        if outcome.committed:
            committed += 1
            commits[outcome.proposer_id] += 1
            del pending[:len(outcome.block.payload)]
        else:
            rejected += 1

    freq = {vid: f"{selections[vid] / config.rounds:.6f}" for vid in sorted(selections)}
    return SimulationReport(
        rounds=config.rounds,
        committed=committed,
        rejected=rejected,
        per_validator_counts={vid: selections[vid] for vid in sorted(selections)},
        committed_by_validator={vid: commits[vid] for vid in sorted(commits)},
        proposer_frequency=freq,
        tip_height=chain.height,
        tip_hash=chain.tip.hash,
        rng_seed=config.rng_seed,
    )
