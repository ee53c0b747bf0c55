/**
 * Single-page shell: hash routing, in-memory session, form wiring, commit
 * polling, and the consumer verify view. All durable state lives in the
 * ledger; every render here is a projection of API responses.
 */

import { NodeApi, NodeApiError, ProvenanceReport } from "./api.js";
import { JsonValue } from "./canonical.js";
import { Signer, signerFromSeedHex } from "./signing.js";
import { pendingConfirmations, ChainScanner } from "./inbox.js";
import { classifyVerifyInput, VALIDATORS } from "./validation.js";
import { renderReport, renderVerifyFailure, escapeHtml } from "./views/provenance.js";
import { buildBody, renderStageForm, STAGE_FIELDS } from "./views/forms.js";

const POLL_INTERVAL_MS = 2000;

interface Session {
  stakeholderId: string;
  role: "cultivator" | "maker" | "merchant" | "consumer";
  signer: Signer;
}

let api = new NodeApi(defaultNodeUrl());
let session: Session | null = null; // key material: memory only, tab scoped
const scanner = () => new ChainScanner(api);

function defaultNodeUrl(): string {
  const here = globalThis.location;
  if (here && here.protocol.startsWith("http")) return here.origin;
  return "http://127.0.0.1:8470";
}

function root(): HTMLElement {
  return document.getElementById("app")!;
}

function nav(): string {
  const links = [`<a href="#/verify">Verify a product</a>`];
  if (!session) {
    links.push(`<a href="#/login">Stakeholder sign-in</a>`);
  } else {
    if (session.role !== "consumer") {
      links.push(`<a href="#/submit/${session.role}">Enter ${session.role} record</a>`);
    }
    if (session.role === "maker" || session.role === "merchant") {
      links.push(`<a href="#/inbox">Confirmations</a>`);
    }
    if (session.role === "merchant") {
      links.push(`<a href="#/issue">Issue QR</a>`);
    }
    links.push(`<a href="#/logout">Sign out (${escapeHtml(session.stakeholderId)})</a>`);
  }
  return `<nav>${links.join(" ")}</nav>`;
}

function page(inner: string): void {
  root().innerHTML = `<header class="top">
      <h1>Halal Trace</h1>${nav()}
    </header><main>${inner}</main>`;
}

// ---------------------------------------------------------------- verify --

async function showReport(promise: Promise<ProvenanceReport>, target: HTMLElement):
    Promise<void> {
  target.innerHTML = `<p class="loading">Checking the ledger…</p>`;
  try {
    target.innerHTML = renderReport(await promise);
  } catch (error) {
    if (error instanceof NodeApiError) {
      target.innerHTML = renderVerifyFailure(error.code, error.detail);
    } else {
      target.innerHTML = renderVerifyFailure("network", String(error));
    }
  }
}

function verifyView(): void {
  page(`
  <section class="verify">
    <h2>Check a product</h2>
    <p>Paste the code under the QR symbol or a trace id, upload a photo of
       the label, or scan with your camera.</p>
    <div class="verify-inputs">
      <form id="paste-form">
        <input id="paste-input" placeholder="HT1|MER-XXXXXXXX|… or MER-XXXXXXXX" size="42">
        <button type="submit">Check</button>
        <span class="field-error" id="paste-error" hidden></span>
      </form>
      <label class="upload">Upload QR photo
        <input type="file" id="upload-input" accept="image/*" hidden>
      </label>
      <button id="camera-button" hidden>Scan with camera</button>
    </div>
    <div id="verify-result"></div>
  </section>`);

  const result = document.getElementById("verify-result")!;
  document.getElementById("paste-form")!.addEventListener("submit", (event) => {
    event.preventDefault();
    const input = (document.getElementById("paste-input") as HTMLInputElement).value;
    const errorSpan = document.getElementById("paste-error")!;
    const classified = classifyVerifyInput(input);
    if (classified.kind === "invalid") {
      errorSpan.textContent = "Not a product code or trace id";
      errorSpan.removeAttribute("hidden");
      return;
    }
    errorSpan.setAttribute("hidden", "");
    const promise = classified.kind === "payload"
      ? api.verifyPayload(classified.value)
      : api.trace(classified.value);
    void showReport(promise, result);
  });

  document.getElementById("upload-input")!.addEventListener("change", (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (file) void showReport(api.verifyImage(file), result);
  });

  // Camera scanning is progressive enhancement: only offered where the
  // browser exposes BarcodeDetector; decoding stays client-side and the
  // resulting payload string goes through the same verify call.
  const BarcodeDetectorCtor = (globalThis as any).BarcodeDetector;
  if (BarcodeDetectorCtor && navigator.mediaDevices) {
    const button = document.getElementById("camera-button")!;
    button.removeAttribute("hidden");
    button.addEventListener("click", () => void cameraScan(BarcodeDetectorCtor, result));
  }
}

async function cameraScan(BarcodeDetectorCtor: any, target: HTMLElement): Promise<void> {
  const video = document.createElement("video");
  video.className = "camera-preview";
  target.replaceChildren(video);
  const stream = await navigator.mediaDevices.getUserMedia({ video: { facingMode: "environment" } });
  video.srcObject = stream;
  await video.play();
  const detector = new BarcodeDetectorCtor({ formats: ["qr_code"] });
  const stop = () => stream.getTracks().forEach((track) => track.stop());
  const tick = async () => {
    if (!video.isConnected) return stop();
    try {
      const codes = await detector.detect(video);
      if (codes.length > 0) {
        stop();
        return void showReport(api.verifyPayload(codes[0].rawValue), target);
      }
    } catch { /* keep scanning */ }
    requestAnimationFrame(() => void tick());
  };
  void tick();
}

// ----------------------------------------------------------------- login --

function loginView(): void {
  page(`
  <section class="login">
    <h2>Stakeholder sign-in</h2>
    <p>Your signing key is imported locally and never leaves this tab.</p>
    <form id="login-form">
      <div class="field"><label>Stakeholder id</label>
        <input id="login-id" placeholder="farm-01"></div>
      <div class="field"><label>Role</label>
        <select id="login-role">
          <option>cultivator</option><option>maker</option>
          <option>merchant</option><option>consumer</option>
        </select></div>
      <div class="field"><label>Signing key (32-byte hex seed or key file)</label>
        <input id="login-key" placeholder="hex seed">
        <input type="file" id="login-key-file"></div>
      <div class="field"><label>Node URL</label>
        <input id="login-node" value="${escapeHtml(api.baseUrl)}"></div>
      <button type="submit">Sign in</button>
      <span class="field-error" id="login-error" hidden></span>
    </form>
  </section>`);

  const keyFile = document.getElementById("login-key-file") as HTMLInputElement;
  keyFile.addEventListener("change", async () => {
    const file = keyFile.files?.[0];
    if (file) {
      (document.getElementById("login-key") as HTMLInputElement).value =
        (await file.text()).trim();
    }
  });

  document.getElementById("login-form")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const errorSpan = document.getElementById("login-error")!;
    try {
      const stakeholderId = (document.getElementById("login-id") as HTMLInputElement).value.trim();
      const role = (document.getElementById("login-role") as HTMLSelectElement).value as Session["role"];
      const seed = (document.getElementById("login-key") as HTMLInputElement).value;
      api = new NodeApi((document.getElementById("login-node") as HTMLInputElement).value.trim());
      if (!stakeholderId) throw new Error("stakeholder id is required");
      const signer = role === "consumer"
        ? { publicKeyHex: "", sign: async () => { throw new Error("consumers do not sign"); } }
        : await signerFromSeedHex(seed);
      session = { stakeholderId, role, signer };
      location.hash = role === "consumer" ? "#/verify" : `#/submit/${role}`;
    } catch (error) {
      errorSpan.textContent = String(error instanceof Error ? error.message : error);
      errorSpan.removeAttribute("hidden");
    }
  });
}

// ---------------------------------------------------------------- submit --

function showFieldErrors(form: HTMLElement,
                         errors: Array<{ field: string; message: string }>): void {
  form.querySelectorAll(".field-error").forEach((el) => el.setAttribute("hidden", ""));
  for (const { field, message } of errors) {
    // fall back to the container field for nested paths like refs[0]
    const exact = form.querySelector(`[data-field="${CSS.escape(field)}"] .field-error`);
    const container = exact ?? form.querySelector(
      `[data-field="${CSS.escape(field.split("[")[0].split(".")[0])}"] .field-error`) ??
      form.querySelector(`[data-field] .field-error`);
    if (container) {
      container.textContent = `${field}: ${message}`;
      container.removeAttribute("hidden");
    }
  }
}

async function pollUntilCommitted(traceId: string, status: HTMLElement): Promise<void> {
  status.removeAttribute("hidden");
  status.innerHTML = `Accepted. Trace id <code>${escapeHtml(traceId)}</code> — pending commit…`;
  const poll = async () => {
    try {
      await api.trace(traceId);
      status.innerHTML = `Committed. Trace id <code>${escapeHtml(traceId)}</code> ` +
        `<a href="#/verify" data-trace="${escapeHtml(traceId)}">view provenance</a>`;
    } catch {
      setTimeout(() => void poll(), POLL_INTERVAL_MS);
    }
  };
  setTimeout(() => void poll(), POLL_INTERVAL_MS);
}

function submitView(stage: string): void {
  if (!session || session.role !== stage) {
    page(`<p class="notice">Sign in with the ${escapeHtml(stage)} role to enter ${escapeHtml(stage)} records.</p>`);
    return;
  }
  page(`<section class="submit"><h2>New ${escapeHtml(stage)} record</h2>${renderStageForm(stage)}</section>`);
  const form = document.querySelector(".stage-form") as HTMLFormElement;
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const values: Record<string, string | boolean> = {};
    for (const field of STAGE_FIELDS[stage]) {
      const el = form.querySelector(`[name="${CSS.escape(field.name)}"]`) as
        HTMLInputElement | HTMLTextAreaElement | HTMLSelectElement;
      values[field.name] = field.kind === "checkbox"
        ? (el as HTMLInputElement).checked : el.value;
    }
    const body = buildBody(stage, values, Math.floor(Date.now() / 1000));
    const problems = VALIDATORS[stage](body);
    if (problems.length > 0) return showFieldErrors(form, problems);
    const status = form.querySelector(".submit-status") as HTMLElement;
    try {
      const envelope = await api.signedEnvelope(
        `${stage}_record`, body as Record<string, JsonValue>,
        session!.stakeholderId, session!.signer);
      const { trace_id } = await api.submitRecord(stage as any, envelope);
      void pollUntilCommitted(trace_id, status);
    } catch (error) {
      if (error instanceof NodeApiError && error.field) {
        showFieldErrors(form, [{ field: error.field, message: error.detail || error.code }]);
      } else {
        status.removeAttribute("hidden");
        status.textContent = error instanceof NodeApiError
          ? `${error.code}: ${error.detail}` : String(error);
      }
    }
  });
}

// ----------------------------------------------------------------- inbox --

async function inboxView(): Promise<void> {
  if (!session || (session.role !== "maker" && session.role !== "merchant")) {
    page(`<p class="notice">The confirmation inbox is for makers and merchants.</p>`);
    return;
  }
  page(`<section class="inbox"><h2>Awaiting your confirmation</h2>
        <p class="loading">Scanning the ledger…</p></section>`);
  const payloads = await scanner().allPayloads();
  const entries = pendingConfirmations(payloads, session.stakeholderId, session.role);
  const list = entries.length === 0
    ? `<p>Nothing awaiting confirmation.</p>`
    : `<ul class="inbox-list">` + entries.map((entry) =>
        `<li><code>${escapeHtml(entry.subject_trace_id)}</code>
         <span class="meta">referenced by your ${escapeHtml(entry.referenced_by)}</span>
         <button data-subject="${escapeHtml(entry.subject_trace_id)}">Confirm authentic</button>
         <span class="confirm-status" hidden></span></li>`).join("") + `</ul>`;
  page(`<section class="inbox"><h2>Awaiting your confirmation</h2>${list}</section>`);
  document.querySelectorAll(".inbox-list button").forEach((button) => {
    button.addEventListener("click", async () => {
      const subject = (button as HTMLElement).dataset.subject!;
      const status = button.nextElementSibling as HTMLElement;
      status.removeAttribute("hidden");
      try {
        const body = { subject_trace_id: subject, recorded_at: Math.floor(Date.now() / 1000) };
        const envelope = await api.signedEnvelope(
          "confirmation", body, session!.stakeholderId, session!.signer);
        await api.confirm(subject, envelope);
        status.textContent = "confirmation submitted";
        (button as HTMLButtonElement).disabled = true;
      } catch (error) {
        if (error instanceof NodeApiError && error.code === "already_confirmed") {
          status.textContent = "already confirmed"; // idempotent, no error dialog
          (button as HTMLButtonElement).disabled = true;
        } else {
          status.textContent = String(error instanceof Error ? error.message : error);
        }
      }
    });
  });
}

// ----------------------------------------------------------------- issue --

function issueView(): void {
  if (!session || session.role !== "merchant") {
    page(`<p class="notice">Only merchants issue product QR codes.</p>`);
    return;
  }
  page(`
  <section class="issue">
    <h2>Issue a product QR</h2>
    <form id="issue-form">
      <div class="field"><label>Merchant trace id</label>
        <input id="issue-id" placeholder="MER-XXXXXXXX"></div>
      <button type="submit">Issue</button>
      <span class="field-error" id="issue-error" hidden></span>
    </form>
    <div id="issue-result"></div>
  </section>`);
  document.getElementById("issue-form")!.addEventListener("submit", async (event) => {
    event.preventDefault();
    const traceId = (document.getElementById("issue-id") as HTMLInputElement).value.trim();
    const errorSpan = document.getElementById("issue-error")!;
    const result = document.getElementById("issue-result")!;
    try {
      const body = { subject_trace_id: traceId, recorded_at: Math.floor(Date.now() / 1000) };
      const envelope = await api.signedEnvelope(
        "qr_issuance", body, session!.stakeholderId, session!.signer);
      const { png, payload } = await api.issueQr(traceId, envelope);
      const url = URL.createObjectURL(png);
      result.innerHTML = `
        <figure class="issued-qr">
          <img src="${url}" alt="product QR">
          <figcaption><code>${escapeHtml(payload)}</code>
            <a href="${url}" download="${escapeHtml(traceId)}.png">download PNG</a>
          </figcaption>
        </figure>`;
      errorSpan.setAttribute("hidden", "");
    } catch (error) {
      errorSpan.textContent = error instanceof NodeApiError
        ? `${error.code}: ${error.detail}` : String(error);
      errorSpan.removeAttribute("hidden");
    }
  });
}

// ----------------------------------------------------------------- router --

function route(): void {
  const hash = location.hash || "#/verify";
  if (hash === "#/logout") {
    session = null;
    location.hash = "#/verify";
    return;
  }
  if (hash.startsWith("#/submit/")) return submitView(hash.split("/")[2]);
  switch (hash) {
    case "#/login": return loginView();
    case "#/inbox": { void inboxView(); return; }
    case "#/issue": return issueView();
    default: return verifyView();
  }
}

export function start(): void {
  window.addEventListener("hashchange", route);
  route();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  start();
}
