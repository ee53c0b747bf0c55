"""Provenance assembly: walk the reference graph from any trace id, run the
verification checks, and render the report consumers see.

The closure is bidirectional — querying a cultivator id pulls in the makers
and merchants that used the batch, and querying a merchant id pulls in every
upstream input — so the report is the full connected component of the
reference graph, flattened in stage order with (height, id) tie-breaking.
"""

from __future__ import annotations

from datetime import date
from typing import Iterable

from .errors import IncompleteProvenance, UnknownTraceId
from .ledger import Chain
from .records import (
    STAGE_ORDER,
    ChainIndex,
    CommittedRecord,
    parse_trace_id,
)

REPORT_VERSION = 1

STAGE_NAMES = {"CUL": "cultivator", "MAK": "maker", "MER": "merchant"}

CHECKS = (
    "stage_coverage",
    "certification_validity",
    "temporal_coherence",
    "referential_integrity",
    "confirmations_present",
)

# Only confirmations_present is advisory; its failure downgrades nothing.
WARN_CHECKS = frozenset({"confirmations_present"})


def reference_closure(index: ChainIndex, trace_id: str) -> set[str]:
    """Connected component of the reference graph containing `trace_id`."""
    seen: set[str] = set()
    frontier = [trace_id]
    while frontier:
        current = frontier.pop()
        if current in seen or current not in index.records:
            continue
        seen.add(current)
        record = index.records[current]
        frontier.extend(ref for ref in record.upstream_refs if ref not in seen)
        frontier.extend(ref for ref in index.downstream.get(current, ()) if ref not in seen)
    return seen


def _ordered_records(index: ChainIndex, ids: Iterable[str]) -> list[CommittedRecord]:
    records = [index.records[tid] for tid in ids]
    return sorted(records, key=lambda r: (STAGE_ORDER[r.stage], r.height, r.trace_id))


def _check_stage_coverage(index: ChainIndex, records: list[CommittedRecord]) -> tuple[str, str]:
    present = {r.trace_id for r in records}
    for rec in records:
        if rec.stage != "MER":
            continue
        maker = index.records.get(rec.body["maker_ref"])
        if maker is None or maker.trace_id not in present:
            continue
        if any(ref in present and ref in index.records
               for ref in maker.body["cultivator_refs"]):
            return "pass", "cultivator, maker and merchant stages all present"
    stages = sorted({STAGE_NAMES[r.stage] for r in records})
    return "fail", f"no complete cultivator->maker->merchant path; stages present: {stages}"


def _check_certifications(records: list[CommittedRecord], query_date: date) -> tuple[str, str]:
    problems = []
    for rec in records:
        cert = rec.body["certification"]
        if not cert["cert_number"].strip():
            problems.append(f"{rec.trace_id}: empty cert_number")
            continue
        valid_from = date.fromisoformat(cert["valid_from"])
        valid_to = date.fromisoformat(cert["valid_to"])
        if not (valid_from <= query_date <= valid_to):
            problems.append(
                f"{rec.trace_id}: certificate {cert['cert_number']} not valid on {query_date.isoformat()}"
            )
    if problems:
        return "fail", "; ".join(problems)
    return "pass", f"all certificates valid on {query_date.isoformat()}"


def _check_temporal(index: ChainIndex, records: list[CommittedRecord]) -> tuple[str, str]:
    problems = []
    for rec in records:
        for ref in rec.upstream_refs:
            upstream = index.records.get(ref)
            if upstream is None:
                continue  # referential check reports this
            if rec.body["recorded_at"] < upstream.body["recorded_at"]:
                problems.append(f"{rec.trace_id} recorded before upstream {ref}")
        if rec.stage == "MER":
            maker = index.records.get(rec.body["maker_ref"])
            if maker and rec.body["purchase_date"] < maker.body["production_date"]:
                problems.append(f"{rec.trace_id} purchased before {maker.trace_id} was produced")
    if problems:
        return "fail", "; ".join(problems)
    return "pass", "record times non-decreasing along every path"


def _check_references(index: ChainIndex, records: list[CommittedRecord]) -> tuple[str, str]:
    expected = {"MAK": "CUL", "MER": "MAK"}
    problems = []
    for rec in records:
        for ref in rec.upstream_refs:
            target = index.records.get(ref)
            if target is None:
                problems.append(f"{rec.trace_id} references missing {ref}")
            elif target.stage != expected[rec.stage]:
                problems.append(f"{rec.trace_id} references wrong-stage {ref}")
    if problems:
        return "fail", "; ".join(problems)
    return "pass", "every reference resolves to a committed record of the right stage"


def _check_confirmations(index: ChainIndex, records: list[CommittedRecord]) -> tuple[str, str]:
    unconfirmed = [
        rec.trace_id for rec in records
        if rec.stage in ("CUL", "MAK") and not index.confirmations_for(rec.trace_id)
    ]
    if unconfirmed:
        return "warn", f"awaiting downstream confirmation: {', '.join(sorted(unconfirmed))}"
    return "pass", "every upstream record confirmed downstream"


def trace(chain: Chain, trace_id: str, *, index: ChainIndex | None = None,
          query_date: date | None = None) -> dict:
    """Assemble the provenance report for `trace_id`.

    Pure given (chain, query_date); `query_date` defaults to today because
    consumers care about the certificate status now, not at commit time.
    """
    parse_trace_id(trace_id)
    if index is None:
        index = ChainIndex.from_chain(chain)
    if trace_id not in index.records:
        raise UnknownTraceId(f"trace id {trace_id} is not committed")
    query_date = query_date or date.today()

    component = reference_closure(index, trace_id)
    records = _ordered_records(index, component)

    results = {
        "stage_coverage": _check_stage_coverage(index, records),
        "certification_validity": _check_certifications(records, query_date),
        "temporal_coherence": _check_temporal(index, records),
        "referential_integrity": _check_references(index, records),
        "confirmations_present": _check_confirmations(index, records),
    }
    checks = [
        {"check_name": name, "status": results[name][0], "detail": results[name][1]}
        for name in CHECKS
    ]

    hard_failures = {name for name in CHECKS
                     if results[name][0] == "fail" and name not in WARN_CHECKS}
    if not hard_failures:
        verdict = "verified"
    elif hard_failures == {"stage_coverage"}:
        verdict = "incomplete"
    else:
        verdict = "inconsistent"

    confirmations = []
    for rec in records:
        confirmations.extend(c.to_dict() for c in index.confirmations_for(rec.trace_id))

    return {
        "report_version": REPORT_VERSION,
        "query_id": trace_id,
        "query_date": query_date.isoformat(),
        "stages": [
            {
                "stage": STAGE_NAMES[rec.stage],
                "trace_id": rec.trace_id,
                "block_height": rec.height,
                "stakeholder_id": rec.stakeholder_id,
                "record": rec.body,
            }
            for rec in records
        ],
        "confirmations": confirmations,
        "checks": checks,
        "verdict": verdict,
    }


def require_issuable(chain: Chain, merchant_trace_id: str,
                     index: ChainIndex | None = None) -> CommittedRecord:
    """Gate for QR issuance: the merchant record must sit on a complete
    three-stage path."""
    stage = parse_trace_id(merchant_trace_id)
    if index is None:
        index = ChainIndex.from_chain(chain)
    record = index.records.get(merchant_trace_id)
    if record is None:
        raise UnknownTraceId(f"trace id {merchant_trace_id} is not committed")
    if stage != "MER" or record.stage != "MER":
        raise IncompleteProvenance("QR codes are issued for merchant-stage records only")
    component = reference_closure(index, merchant_trace_id)
    status, detail = _check_stage_coverage(index, _ordered_records(index, component))
    if status != "pass":
        raise IncompleteProvenance(detail)
    return record
