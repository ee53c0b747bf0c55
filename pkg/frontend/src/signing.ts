/**
 * Client-side Ed25519 signing via WebCrypto.
 *
 * Keys are the same 32-byte hex seeds the CLI's keygen writes. The seed is
 * imported by wrapping it in a PKCS#8 envelope; it stays in this browser
 * tab and is never sent anywhere.
 */

import { canonicalBytes, JsonValue } from "./canonical.js";

// PKCS#8 prefix for an Ed25519 private key (RFC 8410): the 32-byte seed
// follows immediately after.
const PKCS8_PREFIX = hexToBytes("302e020100300506032b657004220420");

export function hexToBytes(hex: string): Uint8Array {
  const clean = hex.trim().toLowerCase();
  if (!/^[0-9a-f]*$/.test(clean) || clean.length % 2 !== 0) {
    throw new Error("not a hex string");
  }
  const out = new Uint8Array(clean.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(clean.slice(2 * i, 2 * i + 2), 16);
  }
  return out;
}

export function bytesToHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

function subtle(): SubtleCrypto {
  const subtleCrypto = globalThis.crypto?.subtle;
  if (!subtleCrypto) {
    throw new Error("WebCrypto is unavailable; use a modern browser over https or localhost");
  }
  return subtleCrypto;
}

export interface Signer {
  readonly publicKeyHex: string;
  sign(body: JsonValue): Promise<string>;
}

export async function signerFromSeedHex(seedHex: string): Promise<Signer> {
  const seed = hexToBytes(seedHex);
  if (seed.length !== 32) {
    throw new Error("signing key must be a 32-byte hex seed");
  }
  const pkcs8 = new Uint8Array(PKCS8_PREFIX.length + seed.length);
  pkcs8.set(PKCS8_PREFIX);
  pkcs8.set(seed, PKCS8_PREFIX.length);
  const privateKey = await subtle().importKey(
    "pkcs8", pkcs8.buffer as ArrayBuffer, { name: "Ed25519" }, true, ["sign"]);

  // derive the public key by exporting the key pair through jwk
  const jwk = await subtle().exportKey("jwk", privateKey);
  if (!jwk.x) {
    throw new Error("could not derive the public key");
  }
  const publicKeyHex = bytesToHex(base64UrlToBytes(jwk.x));

  return {
    publicKeyHex,
    async sign(body: JsonValue): Promise<string> {
      const message = canonicalBytes(body);
      const signature = await subtle().sign(
        { name: "Ed25519" }, privateKey, message.buffer as ArrayBuffer);
      return bytesToHex(new Uint8Array(signature));
    },
  };
}

function base64UrlToBytes(text: string): Uint8Array {
  const base64 = text.replace(/-/g, "+").replace(/_/g, "/");
  const padded = base64 + "=".repeat((4 - (base64.length % 4)) % 4);
  const raw = atob(padded);
  const out = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) out[i] = raw.charCodeAt(i);
  return out;
}
