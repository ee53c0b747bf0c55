/**
 * Canonical JSON, byte-compatible with the node's serializer.
 *
 * Rules: keys sorted by code point, no whitespace, UTF-8, integers in
 * shortest decimal form. Number values whose shortest form needs exponent
 * notation are rejected (the node refuses them too), as are non-finite
 * numbers. Signatures cover these exact bytes, so any drift here breaks
 * every submission.
 */

export class CanonicalizationError extends Error {}

export type JsonValue =
  | null
  | boolean
  | number
  | string
  | JsonValue[]
  | { [key: string]: JsonValue };

function encodeNumber(value: number): string {
  if (!Number.isFinite(value)) {
    throw new CanonicalizationError("non-finite numbers are not canonical");
  }
  if (Number.isInteger(value)) {
    if (Math.abs(value) > 2 ** 53) {
      throw new CanonicalizationError(`number ${value} exceeds exact interchange range`);
    }
    // normalizes -0 and renders without a fractional part
    return String(value === 0 ? 0 : value);
  }
  // below 1e-4 the node's shortest-form rendering goes exponential, so the
  // shared canonical form excludes those values entirely
  if (Math.abs(value) < 1e-4) {
    throw new CanonicalizationError(`number ${value} needs exponent notation and is not canonical`);
  }
  const text = String(value);
  if (text.includes("e") || text.includes("E")) {
    throw new CanonicalizationError(`number ${value} needs exponent notation and is not canonical`);
  }
  return text;
}

export function canonicalJson(value: JsonValue): string {
  if (value === null) return "null";
  switch (typeof value) {
    case "boolean":
      return value ? "true" : "false";
    case "number":
      return encodeNumber(value);
    case "string":
      return JSON.stringify(value);
    case "object":
      break;
    default:
      throw new CanonicalizationError(`type ${typeof value} is not canonicalizable`);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const keys = Object.keys(value).sort();
  const parts = keys.map((key) => JSON.stringify(key) + ":" + canonicalJson(value[key]));
  return "{" + parts.join(",") + "}";
}

export function canonicalBytes(value: JsonValue): Uint8Array {
  return new TextEncoder().encode(canonicalJson(value));
}
