/**
 * Thin typed client over the node's HTTP API. All trust decisions live on
 * the server; this module only moves envelopes and reports.
 */

import { JsonValue } from "./canonical.js";
import { Signer } from "./signing.js";

export interface ApiError {
  code: string;
  detail: string;
  field?: string;
  status: number;
}

export class NodeApiError extends Error implements ApiError {
  code: string;
  detail: string;
  field?: string;
  status: number;

  constructor(status: number, body: { code?: string; detail?: string; field?: string }) {
    super(`${body.code ?? "error"}: ${body.detail ?? status}`);
    this.status = status;
    this.code = body.code ?? `http_${status}`;
    this.detail = body.detail ?? "";
    this.field = body.field;
  }
}

export interface CheckResult {
  check_name: string;
  status: "pass" | "fail" | "warn";
  detail: string;
}

export interface StageEntry {
  stage: "cultivator" | "maker" | "merchant";
  trace_id: string;
  block_height: number;
  stakeholder_id: string;
  record: Record<string, JsonValue>;
}

export interface ConfirmationEntry {
  subject_trace_id: string;
  confirmer_id: string;
  verdict: string;
  recorded_at: number;
  block_height: number;
}

export interface ProvenanceReport {
  report_version: number;
  query_id: string;
  query_date: string;
  stages: StageEntry[];
  confirmations: ConfirmationEntry[];
  checks: CheckResult[];
  verdict: "verified" | "incomplete" | "inconsistent";
}

export interface Envelope {
  type: string;
  body: Record<string, JsonValue>;
  stakeholder_id: string;
  signature: string;
}

export interface BlockRecord {
  height: number;
  timestamp: number;
  payload: Array<Record<string, JsonValue> & { type: string; stakeholder_id: string }>;
  hash: string;
  [key: string]: JsonValue;
}

async function parseJson(response: Response): Promise<any> {
  const text = await response.text();
  try {
    return text ? JSON.parse(text) : {};
  } catch {
    return { code: `http_${response.status}`, detail: text.slice(0, 200) };
  }
}

export class NodeApi {
  constructor(public baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(path: string, init?: RequestInit): Promise<any> {
    const response = await fetch(this.baseUrl + path, init);
    const body = await parseJson(response);
    if (!response.ok) throw new NodeApiError(response.status, body);
    return body;
  }

  private postJson(path: string, doc: unknown): Promise<any> {
    return this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(doc),
    });
  }

  async signedEnvelope(
    type: string, body: Record<string, JsonValue>,
    stakeholderId: string, signer: Signer,
  ): Promise<Envelope> {
    return { type, body, stakeholder_id: stakeholderId, signature: await signer.sign(body) };
  }

  submitRecord(kind: "cultivator" | "maker" | "merchant", envelope: Envelope):
      Promise<{ trace_id: string; status: string }> {
    return this.postJson(`/api/v1/records/${kind}`, envelope);
  }

  confirm(traceId: string, envelope: Envelope): Promise<{ accepted: boolean }> {
    return this.postJson(`/api/v1/records/${traceId}/confirm`, envelope);
  }

  trace(traceId: string): Promise<ProvenanceReport> {
    return this.request(`/api/v1/trace/${traceId}`);
  }

  verifyPayload(payload: string): Promise<ProvenanceReport> {
    return this.postJson("/api/v1/qr/verify", { payload });
  }

  async verifyImage(image: Blob): Promise<ProvenanceReport> {
    return this.request("/api/v1/qr/verify", {
      method: "POST",
      headers: { "content-type": image.type || "application/octet-stream" },
      body: image,
    });
  }

  async issueQr(traceId: string, envelope: Envelope):
      Promise<{ png: Blob; payload: string }> {
    const response = await fetch(`${this.baseUrl}/api/v1/products/${traceId}/qr`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(envelope),
    });
    if (!response.ok) throw new NodeApiError(response.status, await parseJson(response));
    return {
      png: await response.blob(),
      payload: response.headers.get("x-qr-payload") ?? "",
    };
  }

  registerStakeholder(envelope: Envelope): Promise<{ stakeholder_id: string }> {
    return this.postJson("/api/v1/stakeholders", envelope);
  }

  health(): Promise<{ height: number; pending: number; uptime_seconds: number }> {
    return this.request("/api/v1/health");
  }

  block(height: number): Promise<BlockRecord> {
    return this.request(`/api/v1/chain/blocks/${height}`);
  }

  tip(): Promise<BlockRecord> {
    return this.request("/api/v1/chain/tip");
  }
}
