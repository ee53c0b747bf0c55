#!/usr/bin/env python3
"""Regenerate tests/fixtures/cross_language.json from the node package.

The vectors pin the cross-language contracts: canonical JSON bytes, Ed25519
signatures over them, a committed chain, and a full provenance report. Run
from the repository root with the halaltrace package installed:

    python frontend/tests/gen_fixtures.py
"""

import json
import sys
import tempfile
from datetime import date
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPO_ROOT / "tests"))

from cryptography.hazmat.primitives.serialization import (  # noqa: E402
    Encoding, NoEncryption, PrivateFormat,
)
from halaltrace.canonical import canonical_bytes, canonical_dumps  # noqa: E402
from halaltrace.identity import public_key_hex  # noqa: E402
from halaltrace.trace import trace  # noqa: E402
from helpers import Bench, cultivator_body, det_key  # noqa: E402

VALUE_JSON_VECTORS = [
    '{"b":1,"a":[1,2],"c":{"y":null,"x":true}}',
    '{"z":"مزرعة الوادي","a":"line\\nbreak"}',
    '{"lat":24.1302,"lon":-47.35,"whole":1.0,"neg":-0.0001}',
    '[1,2,{"k":"v"},false,null]',
    '{"nested":{"deep":{"deeper":[{"x":1},{"y":2.5}]}}}',
    '"plain string"',
    '12345',
    '{"empty_obj":{},"empty_arr":[],"empty_str":""}',
]


def main():
    vectors = [{"value_json": text, "canonical": canonical_dumps(json.loads(text))}
               for text in VALUE_JSON_VECTORS]

    key = det_key("frontend-fixture")
    seed = key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption()).hex()
    body = cultivator_body(batch="FIXTURE-LOT")
    signing = {
        "seed_hex": seed,
        "public_key_hex": public_key_hex(key),
        "body": body,
        "canonical_body": canonical_dumps(body),
        "signature_hex": key.sign(canonical_bytes(body)).hex(),
    }

    bench = Bench(Path(tempfile.mkdtemp()) / "fx")
    bench.register_defaults()
    cul, mak, mer = bench.full_product(confirm=False)
    bench.confirm(cul, "mak-1")
    bench.commit()
    report = trace(bench.service.chain, mer, query_date=date(2025, 8, 1))
    blocks = [b.to_dict() for b in bench.service.chain.blocks]
    bench.close()

    out = {
        "canonical_vectors": vectors,
        "signing": signing,
        "report": report,
        "blocks": blocks,
        "ids": {"cul": cul, "mak": mak, "mer": mer},
    }
    target = Path(__file__).parent / "fixtures" / "cross_language.json"
    target.write_text(json.dumps(out, indent=1, ensure_ascii=False))
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
