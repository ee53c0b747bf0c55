/**
 * Provenance rendering: ProvenanceReport -> HTML string.
 *
 * Pure presentation. Verdicts, check statuses, and badges come straight
 * from the report fields; nothing is re-derived client-side.
 */

import { ProvenanceReport, StageEntry, CheckResult } from "../api.js";

export function escapeHtml(text: unknown): string {
  return String(text)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const STAGE_LABELS: Record<string, string> = {
  cultivator: "Cultivator",
  maker: "Maker",
  merchant: "Merchant",
};

const VERDICT_COPY: Record<string, string> = {
  verified: "Verified halal provenance",
  incomplete: "Provenance incomplete",
  inconsistent: "Provenance inconsistent",
};

export function mapLink(latitude: number, longitude: number): string {
  return `https://www.openstreetmap.org/?mlat=${latitude}&mlon=${longitude}#map=14/${latitude}/${longitude}`;
}

function stageFacts(stage: StageEntry): string[] {
  const record = stage.record as any;
  const facts: string[] = [];
  if (stage.stage === "cultivator") {
    facts.push(`Facility: ${escapeHtml(record.facility?.name)}`);
    const { latitude, longitude } = record.facility ?? {};
    if (typeof latitude === "number" && typeof longitude === "number") {
      facts.push(`Location: <a href="${mapLink(latitude, longitude)}" target="_blank" rel="noopener">` +
                 `${latitude}, ${longitude}</a>`);
    }
    facts.push(`Raw material: ${escapeHtml(record.raw_material_type)}`);
    if (record.slaughter_method) {
      facts.push(`Slaughter: ${escapeHtml(record.slaughter_method)}`);
    }
    facts.push(`Batch/lot: ${escapeHtml(record.batch_lot)}`);
  } else if (stage.stage === "maker") {
    const names = (record.ingredients ?? []).map((i: any) => escapeHtml(i.name)).join(", ");
    facts.push(`Ingredients: ${names}`);
    facts.push(`Produced: ${escapeHtml(record.production_date)}`);
    facts.push(`Batch: ${escapeHtml(record.batch_number)}`);
    const trained = record.quality_control?.staff_halal_trained;
    facts.push(`Staff halal-trained: ${trained ? "yes" : "no"}`);
  } else {
    facts.push(`Purchased: ${escapeHtml(record.purchase_date)}`);
    facts.push(`Storage: ${escapeHtml(record.storage_conditions)}`);
    facts.push(`Handling: ${escapeHtml(record.handling_procedures)}`);
  }
  facts.push(`Certificate: ${escapeHtml(record.certification?.cert_number)} ` +
             `(${escapeHtml(record.certification?.issuing_body)})`);
  return facts;
}

function renderStageCard(stage: StageEntry, report: ProvenanceReport): string {
  const confirmations = report.confirmations
    .filter((c) => c.subject_trace_id === stage.trace_id)
    .map((c) => `<span class="badge confirmed" title="confirmed by ${escapeHtml(c.confirmer_id)}">` +
                `&#10003; ${escapeHtml(c.confirmer_id)}</span>`)
    .join(" ");
  const facts = stageFacts(stage).map((f) => `<li>${f}</li>`).join("");
  return `
  <article class="stage-card stage-${stage.stage}" data-trace-id="${escapeHtml(stage.trace_id)}">
    <header>
      <span class="stage-name">${STAGE_LABELS[stage.stage]}</span>
      <code class="trace-id">${escapeHtml(stage.trace_id)}</code>
    </header>
    <ul class="facts">${facts}</ul>
    <footer>
      <span class="meta">block ${stage.block_height} &middot; by ${escapeHtml(stage.stakeholder_id)}</span>
      ${confirmations || '<span class="badge pending-confirm">awaiting confirmation</span>'}
    </footer>
  </article>`;
}

function renderCheck(check: CheckResult): string {
  const icon = { pass: "&#10003;", warn: "&#9888;", fail: "&#10007;" }[check.status];
  return `<li class="check check-${check.status}" data-check="${escapeHtml(check.check_name)}">` +
         `<span class="check-icon">${icon}</span>` +
         `<span class="check-name">${escapeHtml(check.check_name.replace(/_/g, " "))}</span>` +
         `<span class="check-detail">${escapeHtml(check.detail)}</span></li>`;
}

export function renderReport(report: ProvenanceReport): string {
  const stages = report.stages.map((s) => renderStageCard(s, report)).join("\n");
  const checks = report.checks.map(renderCheck).join("\n");
  return `
<section class="report verdict-${report.verdict}">
  <div class="verdict-banner">
    <h2>${VERDICT_COPY[report.verdict] ?? escapeHtml(report.verdict)}</h2>
    <p>Trace <code>${escapeHtml(report.query_id)}</code> &middot; checked ${escapeHtml(report.query_date)}</p>
  </div>
  <div class="timeline">${stages}</div>
  <ul class="checks">${checks}</ul>
</section>`;
}

/** Explicit failure states; a failed scan must never render as an empty page. */
export function renderVerifyFailure(code: string, detail: string): string {
  const headline: Record<string, string> = {
    integrity_mismatch: "Integrity check failed",
    unknown_trace_id: "Unknown product",
    malformed_payload: "Not a recognizable product code",
    unsupported_version: "Code from an unsupported version",
    no_qr_found: "No QR code found in the image",
    decode_failed: "The QR code could not be read",
  };
  return `
<section class="report verify-failure" data-code="${escapeHtml(code)}">
  <div class="verdict-banner failure">
    <h2>${escapeHtml(headline[code] ?? "Verification failed")}</h2>
    <p>${escapeHtml(detail)}</p>
    <p class="hint">The product could not be verified against the ledger. Do not rely on its label.</p>
  </div>
</section>`;
}
