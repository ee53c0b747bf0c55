/**
 * Client-side mirror of the node's record validation, so forms can flag
 * problems before signing. The node remains the authority; anything
 * missed here just comes back as a 422 with a field path.
 */

import { JsonValue } from "./canonical.js";

export interface FieldError {
  field: string;
  message: string;
}

const MAX_TEXT = 4096;
const DATE_RE = /^\d{4}-\d{2}-\d{2}$/;
export const TRACE_ID_RE = /^(CUL|MAK|MER)-[0-9A-HJKMNP-TV-Z]{8}$/;
export const QR_PAYLOAD_RE = /^HT1\|MER-[0-9A-HJKMNP-TV-Z]{8}\|[0-9a-f]{8}$/;

export const ANIMAL_MATERIALS = ["poultry", "livestock"];
export const RAW_MATERIAL_TYPES = [...ANIMAL_MATERIALS, "agricultural_produce"];

function text(errors: FieldError[], field: string, value: unknown,
              allowEmpty = false): void {
  if (typeof value !== "string") {
    errors.push({ field, message: "must be text" });
    return;
  }
  if (!allowEmpty && value.trim() === "") {
    errors.push({ field, message: "must not be empty" });
  }
  if (new TextEncoder().encode(value).length > MAX_TEXT) {
    errors.push({ field, message: `longer than ${MAX_TEXT} bytes` });
  }
}

function isoDate(errors: FieldError[], field: string, value: unknown): void {
  if (typeof value !== "string" || !DATE_RE.test(value) ||
      Number.isNaN(Date.parse(value + "T00:00:00Z"))) {
    errors.push({ field, message: "must be a date (YYYY-MM-DD)" });
  }
}

function numberIn(errors: FieldError[], field: string, value: unknown,
                  lo: number, hi: number): void {
  if (typeof value !== "number" || Number.isNaN(value)) {
    errors.push({ field, message: "must be a number" });
  } else if (value < lo || value > hi) {
    errors.push({ field, message: `must be between ${lo} and ${hi}` });
  }
}

function certification(errors: FieldError[], cert: any): void {
  if (typeof cert !== "object" || cert === null) {
    errors.push({ field: "certification", message: "is required" });
    return;
  }
  text(errors, "certification.cert_number", cert.cert_number);
  text(errors, "certification.issuing_body", cert.issuing_body);
  isoDate(errors, "certification.valid_from", cert.valid_from);
  isoDate(errors, "certification.valid_to", cert.valid_to);
  if (typeof cert.valid_from === "string" && typeof cert.valid_to === "string" &&
      cert.valid_from > cert.valid_to) {
    errors.push({ field: "certification.valid_from", message: "is after valid_to" });
  }
}

export function validateCultivatorBody(body: any): FieldError[] {
  const errors: FieldError[] = [];
  const facility = body.facility ?? {};
  text(errors, "facility.name", facility.name);
  numberIn(errors, "facility.latitude", facility.latitude, -90, 90);
  numberIn(errors, "facility.longitude", facility.longitude, -180, 180);
  text(errors, "facility.manager_contact", facility.manager_contact);
  if (!RAW_MATERIAL_TYPES.includes(body.raw_material_type)) {
    errors.push({ field: "raw_material_type",
                  message: `must be one of ${RAW_MATERIAL_TYPES.join(", ")}` });
  } else if (ANIMAL_MATERIALS.includes(body.raw_material_type)) {
    if (!("slaughter_method" in body)) {
      errors.push({ field: "slaughter_method",
                    message: "required for animal raw materials" });
    } else {
      text(errors, "slaughter_method", body.slaughter_method);
    }
  } else if ("slaughter_method" in body) {
    errors.push({ field: "slaughter_method",
                  message: "only allowed for animal raw materials" });
  }
  text(errors, "husbandry_practices", body.husbandry_practices);
  text(errors, "harvest_processing_description", body.harvest_processing_description);
  certification(errors, body.certification);
  text(errors, "batch_lot", body.batch_lot);
  return errors;
}

export function validateMakerBody(body: any): FieldError[] {
  const errors: FieldError[] = [];
  const refs = body.cultivator_refs;
  if (!Array.isArray(refs) || refs.length === 0) {
    errors.push({ field: "cultivator_refs", message: "needs at least one trace id" });
  } else {
    refs.forEach((ref: unknown, i: number) => {
      if (typeof ref !== "string" || !TRACE_ID_RE.test(ref) || !ref.startsWith("CUL-")) {
        errors.push({ field: `cultivator_refs[${i}]`, message: "must be a CUL trace id" });
      }
    });
    if (new Set(refs).size !== refs.length) {
      errors.push({ field: "cultivator_refs", message: "contains duplicates" });
    }
  }
  const ingredients = body.ingredients;
  if (!Array.isArray(ingredients) || ingredients.length === 0) {
    errors.push({ field: "ingredients", message: "needs at least one ingredient" });
  } else {
    ingredients.forEach((ing: any, i: number) => {
      text(errors, `ingredients[${i}].name`, ing?.name);
      if (ing?.cultivator_trace_ref !== undefined &&
          (!Array.isArray(refs) || !refs.includes(ing.cultivator_trace_ref))) {
        errors.push({ field: `ingredients[${i}].cultivator_trace_ref`,
                      message: "must appear in cultivator_refs" });
      }
    });
  }
  text(errors, "production_process_description", body.production_process_description);
  text(errors, "packaging_description", body.packaging_description);
  certification(errors, body.certification);
  isoDate(errors, "production_date", body.production_date);
  text(errors, "batch_number", body.batch_number);
  const qc = body.quality_control ?? {};
  text(errors, "quality_control.notes", qc.notes, true);
  if (typeof qc.staff_halal_trained !== "boolean") {
    errors.push({ field: "quality_control.staff_halal_trained", message: "must be set" });
  }
  return errors;
}

export function validateMerchantBody(body: any): FieldError[] {
  const errors: FieldError[] = [];
  isoDate(errors, "purchase_date", body.purchase_date);
  text(errors, "invoice_number", body.invoice_number);
  text(errors, "supplier_contact", body.supplier_contact);
  text(errors, "storage_conditions", body.storage_conditions);
  text(errors, "storage_locations", body.storage_locations);
  text(errors, "handling_procedures", body.handling_procedures);
  certification(errors, body.certification);
  if (typeof body.maker_ref !== "string" || !TRACE_ID_RE.test(body.maker_ref) ||
      !body.maker_ref.startsWith("MAK-")) {
    errors.push({ field: "maker_ref", message: "must be a MAK trace id" });
  }
  return errors;
}

export const VALIDATORS: Record<string, (body: any) => FieldError[]> = {
  cultivator: validateCultivatorBody,
  maker: validateMakerBody,
  merchant: validateMerchantBody,
};

/** Classify pasted verify-view input: a full QR payload, a bare trace id,
 * or neither. */
export function classifyVerifyInput(text: string):
    { kind: "payload" | "trace_id" | "invalid"; value: string } {
  const trimmed = text.trim();
  if (QR_PAYLOAD_RE.test(trimmed)) return { kind: "payload", value: trimmed };
  if (TRACE_ID_RE.test(trimmed)) return { kind: "trace_id", value: trimmed };
  return { kind: "invalid", value: trimmed };
}
