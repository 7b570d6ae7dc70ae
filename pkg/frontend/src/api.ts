/** Typed client for the avatar refinement service HTTP API. */

import { base64ToBytes, bytesToBase64 } from "./b64.js";

export interface SessionState {
  session_id: string;
  k: number; // iteration counter: edits folded into the avatar so far
  accepted_edits: number;
  gaussians: number;
  checkpoints: string[];
  pending_suggestion: string | null;
  seed: number;
}

export interface SuggestionView {
  suggestion_id: string;
  renderPng: Uint8Array;
  pose: unknown;
  body: number[];
  camera: Record<string, unknown>;
}

export interface SubmitReceipt {
  edit_index: number;
  k: number;
  warning: string | null;
}

export interface UpdateReceipt {
  checkpoint_id: string;
  loss_trace: string;
  deleted_count: number;
  k: number;
}

/** One serialized log entry as the service stores it. */
export interface WireLogEntry {
  tool: string;
  mask: string; // base64 PNG of this entry's region
  [extra: string]: unknown;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`service returned ${status}: ${detail}`);
  }
}

/** 409: the suggestion being edited is no longer the pending one. */
export class ConflictError extends ServiceError {}

async function raiseFor(response: Response): Promise<void> {
  if (response.ok) return;
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  if (response.status === 409) throw new ConflictError(409, detail);
  throw new ServiceError(response.status, detail);
}

export class ServiceClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    await raiseFor(response);
    return response;
  }

  private async postJson(path: string, payload: unknown): Promise<unknown> {
    const response = await this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    return response.json();
  }

  async createSession(payload: Record<string, unknown>): Promise<SessionState> {
    return (await this.postJson("/sessions", payload)) as SessionState;
  }

  async state(sessionId: string): Promise<SessionState> {
    const response = await this.request(`/sessions/${sessionId}`);
    return (await response.json()) as SessionState;
  }

  async suggestion(sessionId: string): Promise<SuggestionView> {
    const response = await this.request(`/sessions/${sessionId}/suggestion`);
    const body = (await response.json()) as Record<string, unknown>;
    return {
      suggestion_id: body.suggestion_id as string,
      renderPng: base64ToBytes(body.render_png as string),
      pose: body.pose,
      body: body.body as number[],
      camera: body.camera as Record<string, unknown>,
    };
  }

  async submitEdits(
    sessionId: string,
    suggestionId: string,
    imagePng: Uint8Array,
    maskPng: Uint8Array,
    editLog: WireLogEntry[],
  ): Promise<SubmitReceipt> {
    return (await this.postJson(`/sessions/${sessionId}/edits`, {
      suggestion_id: suggestionId,
      image: bytesToBase64(imagePng),
      mask: bytesToBase64(maskPng),
      edit_log: editLog,
    })) as SubmitReceipt;
  }

  async update(sessionId: string, repeat = false): Promise<UpdateReceipt> {
    return (await this.postJson(`/sessions/${sessionId}/update`, { repeat })) as UpdateReceipt;
  }

  async renderView(sessionId: string, pose: unknown): Promise<Uint8Array> {
    const query = encodeURIComponent(JSON.stringify(pose));
    const response = await this.request(`/sessions/${sessionId}/render?pose=${query}`);
    return new Uint8Array(await response.arrayBuffer());
  }

  async inpaintCandidates(
    sessionId: string,
    maskPng: Uint8Array,
    prompt: string,
    candidates = 3,
  ): Promise<Uint8Array[]> {
    const body = (await this.postJson(`/sessions/${sessionId}/inpaint`, {
      mask: bytesToBase64(maskPng),
      prompt,
      candidates,
    })) as { candidates: string[] };
    return body.candidates.map(base64ToBytes);
  }
}
