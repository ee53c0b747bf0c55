#!/usr/bin/env python3
"""Full product journey against an in-process node.

Registers a cultivator, maker, and merchant, walks one batch of poultry
through all three stages with confirmations, issues the product QR, and
verifies it the way a consumer scan would. Artifacts land in ./demo-out/.

Usage: python scripts/demo_end_to_end.py
"""

import json
import shutil
import time
from pathlib import Path

from halaltrace.canonical import canonical_bytes
from halaltrace.identity import generate_signing_key, public_key_hex
from halaltrace.node import NodeConfig, NodeService, ValidatorSpec

OUT = Path("demo-out")


def signed(envelope_type, body, stakeholder_id, key):
    return {
        "type": envelope_type,
        "body": body,
        "stakeholder_id": stakeholder_id,
        "signature": key.sign(canonical_bytes(body)).hex(),
    }


def main():
    if OUT.exists():
        shutil.rmtree(OUT)
    OUT.mkdir()
    now = int(time.time())
    today = time.strftime("%Y-%m-%d", time.gmtime(now))

    admin_key = generate_signing_key()
    service = NodeService(NodeConfig(
        data_dir=OUT / "node-data",
        admin_id="admin-1",
        admin_public_key=public_key_hex(admin_key),
        validators=(ValidatorSpec("v1", 1), ValidatorSpec("v2", 3)),
        auto_rounds=False,
    ))

    keys = {}
    for sid, role in [("farm-01", "cultivator"), ("kitchen-01", "maker"),
                      ("market-01", "merchant")]:
        keys[sid] = generate_signing_key()
        service.register_stakeholder(signed("stakeholder_registration", {
            "stakeholder_id": sid, "role": role,
            "public_key": public_key_hex(keys[sid]),
            "display_name": sid, "contact": f"{sid}@example.test",
        }, "admin-1", admin_key))
    outcome = service.run_round_now()
    print(f"registrations committed in block {outcome.block.height}")

    cert = {"cert_number": "HC-2025-104", "issuing_body": "Regional Halal Board",
            "valid_from": "2024-01-01", "valid_to": "2026-12-31"}

    cul_id, _ = service.submit_record("cultivator", signed("cultivator_record", {
        "facility": {"name": "Green Valley Farm", "latitude": 24.1302,
                     "longitude": 47.3452, "manager_contact": "manager@farm.test"},
        "raw_material_type": "poultry",
        "husbandry_practices": "free range, certified feed only",
        "slaughter_method": "hand slaughter under certified supervision",
        "harvest_processing_description": "same-day chilled transport",
        "certification": dict(cert), "batch_lot": "LOT-2025-0610",
        "recorded_at": now - 3 * 86400,
    }, "farm-01", keys["farm-01"]))
    service.run_round_now()
    print(f"cultivator record {cul_id}")

    mak_id, _ = service.submit_record("maker", signed("maker_record", {
        "ingredients": [{"name": "chicken", "cultivator_trace_ref": cul_id},
                        {"name": "salt"}, {"name": "spice mix"}],
        "production_process_description": "marinated, grilled, flash frozen",
        "certification": dict(cert), "packaging_description": "sealed tray, halal mark",
        "cultivator_refs": [cul_id], "production_date": today,
        "batch_number": "B-2025-118",
        "quality_control": {"notes": "line 2 inspected", "staff_halal_trained": True},
        "recorded_at": now - 2 * 86400,
    }, "kitchen-01", keys["kitchen-01"]))
    service.run_round_now()
    print(f"maker record      {mak_id}")

    mer_id, _ = service.submit_record("merchant", signed("merchant_record", {
        "purchase_date": today, "invoice_number": "INV-88021",
        "supplier_contact": "sales@kitchen.test",
        "storage_conditions": "chilled 2-4C", "storage_locations": "store 5 cold room",
        "handling_procedures": "sealed transport, dedicated halal shelf",
        "certification": dict(cert), "maker_ref": mak_id,
        "recorded_at": now - 86400,
    }, "market-01", keys["market-01"]))
    service.run_round_now()
    print(f"merchant record   {mer_id}")

    for subject, confirmer in [(cul_id, "kitchen-01"), (mak_id, "market-01")]:
        service.confirm_record(signed("confirmation", {
            "subject_trace_id": subject, "recorded_at": now,
        }, confirmer, keys[confirmer]))
    service.run_round_now()
    print("confirmations committed")

    payload, png = service.issue_qr(signed("qr_issuance", {
        "subject_trace_id": mer_id, "recorded_at": now,
    }, "market-01", keys["market-01"]))
    (OUT / "product-qr.png").write_bytes(png)
    print(f"issued QR payload {payload} -> {OUT / 'product-qr.png'}")

    report = service.verify_image(png)
    (OUT / "provenance-report.json").write_text(json.dumps(report, indent=2))
    print(f"consumer scan verdict: {report['verdict']}")
    for check in report["checks"]:
        print(f"  {check['status']:>4}  {check['check_name']}: {check['detail']}")
    print(f"chain height {service.chain.height}, "
          f"validate ok={service.validate().ok}")
    service.shutdown()


if __name__ == "__main__":
    main()
