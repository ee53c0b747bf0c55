/**
 * Stage-entry form definitions and form-data -> record-body builders.
 *
 * Field definitions drive both rendering and collection so the form and
 * the body never drift; validation.ts checks the built body before it is
 * signed and submitted.
 */

import { JsonValue } from "../canonical.js";
import { escapeHtml } from "./provenance.js";
import { RAW_MATERIAL_TYPES } from "../validation.js";

export interface FieldSpec {
  name: string;          // dotted path into the record body
  label: string;
  kind: "text" | "textarea" | "number" | "date" | "select" | "checkbox" | "list";
  options?: string[];
  placeholder?: string;
  hint?: string;
}

export const CULTIVATOR_FIELDS: FieldSpec[] = [
  { name: "facility.name", label: "Facility name", kind: "text" },
  { name: "facility.latitude", label: "Latitude", kind: "number", placeholder: "24.1302" },
  { name: "facility.longitude", label: "Longitude", kind: "number", placeholder: "47.3452" },
  { name: "facility.manager_contact", label: "Facility manager contact", kind: "text" },
  { name: "raw_material_type", label: "Raw material type", kind: "select",
    options: [...RAW_MATERIAL_TYPES] },
  { name: "husbandry_practices", label: "Husbandry practices (feed, welfare)", kind: "textarea" },
  { name: "slaughter_method", label: "Slaughter method", kind: "textarea",
    hint: "Required for poultry and livestock; leave empty for produce." },
  { name: "harvest_processing_description", label: "Harvesting / processing", kind: "textarea" },
  { name: "certification.cert_number", label: "Halal certificate number", kind: "text" },
  { name: "certification.issuing_body", label: "Issuing body", kind: "text" },
  { name: "certification.valid_from", label: "Certificate valid from", kind: "date" },
  { name: "certification.valid_to", label: "Certificate valid to", kind: "date" },
  { name: "batch_lot", label: "Batch / lot number", kind: "text" },
];

export const MAKER_FIELDS: FieldSpec[] = [
  { name: "ingredients", label: "Ingredients (one per line)", kind: "list",
    hint: "Append | CUL-… to tie an ingredient to a cultivator batch." },
  { name: "cultivator_refs", label: "Cultivator trace ids (one per line)", kind: "list" },
  { name: "production_process_description", label: "Production process", kind: "textarea" },
  { name: "packaging_description", label: "Packaging", kind: "textarea" },
  { name: "production_date", label: "Production date", kind: "date" },
  { name: "batch_number", label: "Batch number", kind: "text" },
  { name: "quality_control.notes", label: "Quality control notes", kind: "textarea" },
  { name: "quality_control.staff_halal_trained",
    label: "Staff completed halal food management training", kind: "checkbox" },
  { name: "certification.cert_number", label: "Halal certificate number", kind: "text" },
  { name: "certification.issuing_body", label: "Issuing body", kind: "text" },
  { name: "certification.valid_from", label: "Certificate valid from", kind: "date" },
  { name: "certification.valid_to", label: "Certificate valid to", kind: "date" },
];

export const MERCHANT_FIELDS: FieldSpec[] = [
  { name: "maker_ref", label: "Maker trace id", kind: "text", placeholder: "MAK-…" },
  { name: "purchase_date", label: "Purchase date", kind: "date" },
  { name: "invoice_number", label: "Invoice number", kind: "text" },
  { name: "supplier_contact", label: "Supplier contact", kind: "text" },
  { name: "storage_conditions", label: "Storage conditions", kind: "textarea" },
  { name: "storage_locations", label: "Storage locations", kind: "textarea" },
  { name: "handling_procedures", label: "Handling procedures", kind: "textarea" },
  { name: "certification.cert_number", label: "Halal certificate number", kind: "text" },
  { name: "certification.issuing_body", label: "Issuing body", kind: "text" },
  { name: "certification.valid_from", label: "Certificate valid from", kind: "date" },
  { name: "certification.valid_to", label: "Certificate valid to", kind: "date" },
];

export const STAGE_FIELDS: Record<string, FieldSpec[]> = {
  cultivator: CULTIVATOR_FIELDS,
  maker: MAKER_FIELDS,
  merchant: MERCHANT_FIELDS,
};

export function renderField(field: FieldSpec): string {
  const id = `f-${field.name.replace(/\./g, "-")}`;
  const hint = field.hint ? `<small class="hint">${escapeHtml(field.hint)}</small>` : "";
  let control: string;
  switch (field.kind) {
    case "textarea":
    case "list":
      control = `<textarea id="${id}" name="${escapeHtml(field.name)}" rows="3"></textarea>`;
      break;
    case "select":
      control = `<select id="${id}" name="${escapeHtml(field.name)}">` +
        (field.options ?? []).map((o) => `<option value="${escapeHtml(o)}">${escapeHtml(o)}</option>`).join("") +
        `</select>`;
      break;
    case "checkbox":
      control = `<input type="checkbox" id="${id}" name="${escapeHtml(field.name)}">`;
      break;
    default:
      control = `<input type="${field.kind}" id="${id}" name="${escapeHtml(field.name)}"` +
        (field.kind === "number" ? ` step="any"` : "") +
        (field.placeholder ? ` placeholder="${escapeHtml(field.placeholder)}"` : "") + `>`;
  }
  return `<div class="field" data-field="${escapeHtml(field.name)}">` +
    `<label for="${id}">${escapeHtml(field.label)}</label>${control}${hint}` +
    `<span class="field-error" hidden></span></div>`;
}

export function renderStageForm(stage: string): string {
  const fields = STAGE_FIELDS[stage].map(renderField).join("\n");
  return `<form class="stage-form" data-stage="${escapeHtml(stage)}">
    ${fields}
    <button type="submit">Sign and submit ${escapeHtml(stage)} record</button>
    <p class="submit-status" hidden></p>
  </form>`;
}

function setPath(target: Record<string, any>, path: string, value: JsonValue): void {
  const parts = path.split(".");
  let cursor = target;
  for (const part of parts.slice(0, -1)) {
    cursor = cursor[part] ??= {};
  }
  cursor[parts[parts.length - 1]] = value;
}

/** Collected raw form values (by dotted field name) -> record body. */
export function buildBody(stage: string, values: Record<string, string | boolean>,
                          recordedAt: number): Record<string, JsonValue> {
  const body: Record<string, any> = {};
  for (const field of STAGE_FIELDS[stage]) {
    const raw = values[field.name];
    if (field.kind === "checkbox") {
      setPath(body, field.name, raw === true || raw === "on");
      continue;
    }
    const textValue = typeof raw === "string" ? raw.trim() : "";
    if (field.kind === "number") {
      setPath(body, field.name, textValue === "" ? null : Number(textValue));
    } else if (field.kind === "list") {
      const lines = textValue.split("\n").map((l) => l.trim()).filter(Boolean);
      if (field.name === "ingredients") {
        setPath(body, field.name, lines.map((line): Record<string, JsonValue> => {
          const [name, ref] = line.split("|").map((p) => p.trim());
          const item: Record<string, JsonValue> = { name };
          if (ref) item.cultivator_trace_ref = ref;
          return item;
        }));
      } else {
        setPath(body, field.name, lines);
      }
    } else {
      setPath(body, field.name, textValue);
    }
  }
  if (stage === "cultivator" && body.slaughter_method === "") {
    delete body.slaughter_method; // absent, not empty, for produce
  }
  body.recorded_at = recordedAt;
  return body;
}
