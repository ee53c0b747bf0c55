"""Shared test bench: a node service wired with deterministic keys plus
builders for valid stage-record bodies."""

from __future__ import annotations

import hashlib
import random
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from halaltrace.canonical import canonical_bytes
from halaltrace.identity import public_key_hex
from halaltrace.node import NodeConfig, NodeService, ValidatorSpec

BASE_TIME = 1_750_000_000  # 2025-06-15T13:46:40Z
CERT = {
    "cert_number": "HC-0001",
    "issuing_body": "Regional Halal Board",
    "valid_from": "2020-01-01",
    "valid_to": "2099-12-31",
}


def det_key(name: str) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(
        hashlib.sha256(f"test-key|{name}".encode()).digest())


def cultivator_body(*, batch="LOT-1", recorded_at=BASE_TIME, material="poultry", **over):
    body = {
        "facility": {
            "name": "Green Valley Farm",
            "latitude": 24.1302,
            "longitude": 47.3452,
            "manager_contact": "manager@farm.test",
        },
        "raw_material_type": material,
        "husbandry_practices": "free range, certified feed",
        "harvest_processing_description": "same-day chilled transport",
        "certification": dict(CERT),
        "batch_lot": batch,
        "recorded_at": recorded_at,
    }
    if material in ("poultry", "livestock"):
        body["slaughter_method"] = "hand slaughter, certified supervisor"
    body.update(over)
    return body


def maker_body(cultivator_refs, *, batch="B-1", recorded_at=BASE_TIME + 1000,
               production_date="2025-07-01", **over):
    body = {
        "ingredients": [{"name": "chicken", "cultivator_trace_ref": cultivator_refs[0]},
                        {"name": "salt"}],
        "production_process_description": "marinated, cooked, sealed",
        "certification": dict(CERT),
        "packaging_description": "vacuum tray, halal mark",
        "cultivator_refs": list(cultivator_refs),
        "production_date": production_date,
        "batch_number": batch,
        "quality_control": {"notes": "line inspected", "staff_halal_trained": True},
        "recorded_at": recorded_at,
    }
    body.update(over)
    return body


def merchant_body(maker_ref, *, recorded_at=BASE_TIME + 2000,
                  purchase_date="2025-07-02", **over):
    body = {
        "purchase_date": purchase_date,
        "invoice_number": "INV-0001",
        "supplier_contact": "sales@maker.test",
        "storage_conditions": "chilled 2-4C",
        "storage_locations": "store 5, central market",
        "handling_procedures": "sealed transport, dedicated shelf",
        "certification": dict(CERT),
        "maker_ref": maker_ref,
        "recorded_at": recorded_at,
    }
    body.update(over)
    return body


class Bench:
    """A NodeService plus deterministic stakeholder keys and round control."""

    def __init__(self, data_dir: Path, validators=(("v1", 1), ("v2", 3)),
                 batch_size=100, auto_rounds=False, round_timer=5.0):
        self.admin_key = det_key("admin")
        self.keys: dict[str, Ed25519PrivateKey] = {"admin-1": self.admin_key}
        self.config = NodeConfig(
            data_dir=Path(data_dir),
            admin_id="admin-1",
            admin_public_key=public_key_hex(self.admin_key),
            validators=tuple(ValidatorSpec(v, s) for v, s in validators),
            batch_size=batch_size,
            auto_rounds=auto_rounds,
            round_timer_seconds=round_timer,
        )
        self.clock_value = BASE_TIME + 10_000
        self.service = NodeService(self.config, clock=lambda: self.clock_value)

    def sign(self, envelope_type: str, body: dict, stakeholder_id: str) -> dict:
        key = self.keys[stakeholder_id]
        return {
            "type": envelope_type,
            "body": body,
            "stakeholder_id": stakeholder_id,
            "signature": key.sign(canonical_bytes(body)).hex(),
        }

    def register(self, stakeholder_id: str, role: str) -> None:
        self.keys[stakeholder_id] = det_key(stakeholder_id)
        body = {
            "stakeholder_id": stakeholder_id,
            "role": role,
            "public_key": public_key_hex(self.keys[stakeholder_id]),
            "display_name": stakeholder_id.replace("-", " ").title(),
            "contact": f"{stakeholder_id}@example.test",
        }
        self.service.register_stakeholder(
            self.sign("stakeholder_registration", body, "admin-1"))

    def register_defaults(self) -> None:
        for sid, role in [("cul-1", "cultivator"), ("mak-1", "maker"),
                          ("mer-1", "merchant"), ("con-1", "consumer")]:
            self.register(sid, role)
        self.commit()

    def commit(self):
        self.clock_value += 1
        return self.service.run_round_now()

    def submit(self, kind: str, body: dict, stakeholder_id: str) -> str:
        trace_id, _ = self.service.submit_record(
            kind, self.sign(f"{kind}_record", body, stakeholder_id))
        return trace_id

    def confirm(self, subject: str, stakeholder_id: str, recorded_at=None) -> None:
        body = {"subject_trace_id": subject,
                "recorded_at": recorded_at or (BASE_TIME + 5000)}
        self.service.confirm_record(self.sign("confirmation", body, stakeholder_id))

    def full_product(self, *, confirm=True) -> tuple[str, str, str]:
        """Commit one CUL -> MAK -> MER path; returns the three trace ids."""
        n = self._product_seq = getattr(self, "_product_seq", 0) + 1
        cul = self.submit("cultivator", cultivator_body(batch=f"LOT-{n}"), "cul-1")
        self.commit()
        mak = self.submit("maker", maker_body([cul], batch=f"B-{n}"), "mak-1")
        self.commit()
        mer = self.submit("merchant",
                          merchant_body(mak, invoice_number=f"INV-{n}"), "mer-1")
        self.commit()
        if confirm:
            self.confirm(cul, "mak-1")
            self.confirm(mak, "mer-1")
            self.commit()
        return cul, mak, mer

    def close(self) -> None:
        self.service.shutdown()


def random_supply_chain(bench: Bench, rng: random.Random, max_products: int = 100):
    """Commit a random DAG of records; returns all committed trace ids.

    Makers reference 1-5 cultivators; merchants reference one maker; some
    cultivators stay unreferenced so incomplete components exist too.
    """
    n_makers = rng.randint(1, max(1, max_products // 4))
    cul_ids, mak_ids, mer_ids = [], [], []
    t = BASE_TIME
    total = 0
    pool_targets = []
    for m in range(n_makers):
        wanted = rng.randint(1, 5)
        refs = []
        # share an existing cultivator sometimes to create wide components
        if cul_ids and rng.random() < 0.3:
            refs.append(rng.choice(cul_ids))
        while len(refs) < wanted and total < max_products:
            body = cultivator_body(batch=f"LOT-{m}-{len(refs)}-{rng.randint(0, 10**9)}",
                                   recorded_at=t)
            refs.append(bench.submit("cultivator", body, "cul-1"))
            cul_ids.append(refs[-1])
            total += 1
        if refs:
            pool_targets.append((m, refs))
    bench.commit()
    for m, refs in pool_targets:
        if total >= max_products:
            break
        body = maker_body(refs, batch=f"B-{m}-{rng.randint(0, 10**9)}",
                          recorded_at=t + 1000)
        mak_ids.append(bench.submit("maker", body, "mak-1"))
        total += 1
    bench.commit()
    for m, mak in enumerate(mak_ids):
        if total >= max_products:
            break
        for _ in range(rng.randint(0, 2)):
            if total >= max_products:
                break
            body = merchant_body(mak, recorded_at=t + 2000,
                                 invoice_number=f"INV-{m}-{rng.randint(0, 10**9)}")
            mer_ids.append(bench.submit("merchant", body, "mer-1"))
            total += 1
    bench.commit()
    return cul_ids + mak_ids + mer_ids
