/** Browser shell: canvas, tools, and the suggestion/edit/update loop.
 *
 * All avatar imagery comes from the service; this file only moves pixels
 * between PNG payloads, the EditorCore, and the canvas.
 */

import { ConflictError, ServiceClient, type SuggestionView } from "./api.js";
import { EditorCore } from "./editor.js";
import { makeBitmap, type Bitmap } from "./bitmap.js";
import { encodePngGray } from "./png.js";
import { clampBrushRadius, type Rgb, type SelectionPath } from "./types.js";

const params = new URLSearchParams(location.search);
const client = new ServiceClient(params.get("service") ?? "http://127.0.0.1:8000");

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const canvas = el<HTMLCanvasElement>("canvas");
const overlay = el<HTMLCanvasElement>("overlay");
const ctx = canvas.getContext("2d")!;
const octx = overlay.getContext("2d")!;

interface UiState {
  sessionId: string | null;
  suggestionId: string | null;
  editor: EditorCore | null;
  selection: SelectionPath | null;
  drawing: SelectionPath | null;
  candidates: { pngs: Uint8Array[]; prompt: string; path: SelectionPath } | null;
  inFlight: boolean;
}

const ui: UiState = {
  sessionId: params.get("session"),
  suggestionId: null,
  editor: null,
  selection: null,
  drawing: null,
  candidates: null,
  inFlight: false,
};

function draftKey(): string {
  return `splatshop-draft:${ui.sessionId}:${ui.suggestionId}`;
}

function toast(message: string, tone: "info" | "error" = "info"): void {
  const box = el<HTMLDivElement>("toast");
  box.textContent = message;
  box.className = `toast show ${tone}`;
  setTimeout(() => box.classList.remove("show"), 4000);
}

function setBanner(message: string | null): void {
  el<HTMLSpanElement>("banner-text").textContent = message ?? "";
  el<HTMLDivElement>("banner").style.display = message ? "flex" : "none";
}

async function decodeServicePng(bytes: Uint8Array): Promise<Bitmap> {
  const blob = new Blob([bytes.buffer.slice(0) as ArrayBuffer], { type: "image/png" });
  const image = await createImageBitmap(blob);
  const scratch = document.createElement("canvas");
  scratch.width = image.width;
  scratch.height = image.height;
  const sctx = scratch.getContext("2d")!;
  sctx.drawImage(image, 0, 0);
  const rgba = sctx.getImageData(0, 0, image.width, image.height).data;
  const rgb = new Uint8Array(image.width * image.height * 3);
  for (let i = 0; i < image.width * image.height; i++) {
    rgb[i * 3] = rgba[i * 4];
    rgb[i * 3 + 1] = rgba[i * 4 + 1];
    rgb[i * 3 + 2] = rgba[i * 4 + 2];
  }
  return makeBitmap(image.width, image.height, rgb);
}

function paint(): void {
  const editor = ui.editor;
  if (!editor) return;
  canvas.width = overlay.width = editor.width;
  canvas.height = overlay.height = editor.height;
  const rgba = new Uint8ClampedArray(editor.width * editor.height * 4);
  const rgb = editor.working.data;
  for (let i = 0; i < editor.width * editor.height; i++) {
    rgba[i * 4] = rgb[i * 3];
    rgba[i * 4 + 1] = rgb[i * 3 + 1];
    rgba[i * 4 + 2] = rgb[i * 3 + 2];
    rgba[i * 4 + 3] = 255;
  }
  ctx.putImageData(new ImageData(rgba, editor.width, editor.height), 0, 0);
  paintOverlay();
}

function paintOverlay(): void {
  octx.clearRect(0, 0, overlay.width, overlay.height);
  const path = ui.drawing ?? ui.selection;
  if (!path || path.points.length === 0) return;
  octx.strokeStyle = ui.drawing ? "#ffcf40" : "#3fa7ff";
  octx.lineWidth = path.kind === "brush" ? 2 * clampBrushRadius(path.radius ?? 8) : 1.5;
  octx.lineCap = octx.lineJoin = "round";
  octx.globalAlpha = path.kind === "brush" ? 0.35 : 1.0;
  octx.beginPath();
  octx.moveTo(path.points[0].x, path.points[0].y);
  for (const p of path.points.slice(1)) octx.lineTo(p.x, p.y);
  if (path.kind === "lasso" && !ui.drawing) octx.closePath();
  octx.stroke();
  octx.globalAlpha = 1.0;
}

function saveDraft(): void {
  if (!ui.editor || !ui.sessionId || !ui.suggestionId) return;
  if (ui.editor.dirty) {
    localStorage.setItem(draftKey(), ui.editor.serializeDraft());
  } else {
    localStorage.removeItem(draftKey());
  }
}

function refreshControls(): void {
  el<HTMLButtonElement>("submit").disabled = ui.inFlight || !ui.editor?.dirty;
  el<HTMLButtonElement>("undo").disabled = ui.inFlight || !ui.editor?.dirty;
  for (const id of ["fill-white", "fill-color", "inpaint"]) {
    el<HTMLButtonElement>(id).disabled = ui.inFlight || !ui.selection;
  }
}

async function loadSuggestion(): Promise<void> {
  if (!ui.sessionId) return;
  setBanner(null);
  let view: SuggestionView;
  try {
    view = await client.suggestion(ui.sessionId);
    const state = await client.state(ui.sessionId);
    el<HTMLSpanElement>("iteration").textContent = String(state.k);
  } catch (err) {
    setBanner(`could not reach the service: ${(err as Error).message}`);
    return;
  }
  ui.suggestionId = view.suggestion_id;
  const pristine = await decodeServicePng(view.renderPng);
  const draft = localStorage.getItem(draftKey());
  if (draft) {
    try {
      ui.editor = EditorCore.restoreDraft(pristine, draft);
      toast("restored unsent edits");
    } catch {
      ui.editor = new EditorCore(pristine);
    }
  } else {
    ui.editor = new EditorCore(pristine);
  }
  ui.selection = ui.drawing = ui.candidates = null;
  renderCandidates();
  paint();
  refreshControls();
}

function pointerPos(event: PointerEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * canvas.width,
    y: ((event.clientY - rect.top) / rect.height) * canvas.height,
  };
}

function currentTool(): "lasso" | "brush" {
  return (document.querySelector('input[name="tool"]:checked') as HTMLInputElement)
    .value as "lasso" | "brush";
}

overlay.addEventListener("pointerdown", (event) => {
  if (!ui.editor || ui.inFlight) return;
  overlay.setPointerCapture(event.pointerId);
  const kind = currentTool();
  ui.drawing = {
    kind,
    closed: false,
    points: [pointerPos(event)],
    radius: kind === "brush" ? Number(el<HTMLInputElement>("radius").value) : undefined,
  };
  paintOverlay();
});

overlay.addEventListener("pointermove", (event) => {
  if (!ui.drawing) return;
  ui.drawing.points.push(pointerPos(event));
  paintOverlay();
});

overlay.addEventListener("pointerup", () => {
  if (!ui.drawing) return;
  const path = ui.drawing;
  ui.drawing = null;
  if (path.kind === "lasso") {
    path.closed = true;
    ui.selection = path.points.length >= 3 ? path : null;
  } else {
    ui.selection = path;
  }
  paintOverlay();
  refreshControls();
});

function applyFill(background: boolean): void {
  if (!ui.editor || !ui.selection) return;
  try {
    if (background) {
      ui.editor.applyBackgroundFill(ui.selection);
    } else {
      const hex = el<HTMLInputElement>("color").value;
      const color: Rgb = [
        parseInt(hex.slice(1, 3), 16),
        parseInt(hex.slice(3, 5), 16),
        parseInt(hex.slice(5, 7), 16),
      ];
      ui.editor.applyColorFill(ui.selection, color);
    }
  } catch (err) {
    toast((err as Error).message, "error");
    return;
  }
  ui.selection = null;
  saveDraft();
  paint();
  refreshControls();
}

el<HTMLButtonElement>("fill-white").addEventListener("click", () => applyFill(true));
el<HTMLButtonElement>("fill-color").addEventListener("click", () => applyFill(false));

el<HTMLButtonElement>("undo").addEventListener("click", () => {
  if (ui.editor?.undo()) {
    saveDraft();
    paint();
    refreshControls();
  }
});

function renderCandidates(): void {
  const strip = el<HTMLDivElement>("candidates");
  strip.innerHTML = "";
  if (!ui.candidates) return;
  ui.candidates.pngs.forEach((png, index) => {
    const img = document.createElement("img");
    const blob = new Blob([png.buffer.slice(0) as ArrayBuffer], { type: "image/png" });
    img.src = URL.createObjectURL(blob);
    img.title = `candidate ${index}`;
    img.addEventListener("click", () => {
      void pickCandidate(index);
    });
    strip.appendChild(img);
  });
}

async function pickCandidate(index: number): Promise<void> {
  const ctxState = ui.candidates;
  if (!ui.editor || !ctxState) return;
  const bitmap = await decodeServicePng(ctxState.pngs[index]);
  ui.editor.applyCandidate(ctxState.path, ctxState.prompt, index, bitmap);
  ui.candidates = null;
  ui.selection = null;
  renderCandidates();
  saveDraft();
  paint();
  refreshControls();
}

el<HTMLButtonElement>("inpaint").addEventListener("click", () => {
  void (async () => {
    if (!ui.editor || !ui.selection || !ui.sessionId) return;
    const prompt = el<HTMLInputElement>("prompt").value;
    const path = ui.selection;
    const mask = ui.editor.regionMask(path);
    const gray = new Uint8Array(mask.length);
    for (let i = 0; i < mask.length; i++) gray[i] = mask[i] ? 255 : 0;
    try {
      const pngs = await client.inpaintCandidates(
        ui.sessionId,
        encodePngGray(ui.editor.width, ui.editor.height, gray),
        prompt,
      );
      ui.candidates = { pngs, prompt, path };
      renderCandidates();
    } catch (err) {
      toast((err as Error).message, "error");
    }
  })();
});

el<HTMLButtonElement>("submit").addEventListener("click", () => {
  void (async () => {
    if (!ui.editor || !ui.sessionId || !ui.suggestionId || ui.inFlight) return;
    ui.inFlight = true;
    refreshControls();
    try {
      const submission = ui.editor.buildSubmission();
      await client.submitEdits(
        ui.sessionId,
        ui.suggestionId,
        submission.imagePng,
        submission.maskPng,
        submission.editLog,
      );
      localStorage.removeItem(draftKey());
      toast("edit accepted; updating avatar…");
      await client.update(ui.sessionId);
      await loadSuggestion();
      toast("avatar updated");
    } catch (err) {
      if (err instanceof ConflictError) {
        toast("suggestion went stale; reloading", "error");
        await loadSuggestion();
      } else {
        toast((err as Error).message, "error");
      }
    } finally {
      ui.inFlight = false;
      refreshControls();
    }
  })();
});

el<HTMLButtonElement>("create").addEventListener("click", () => {
  void (async () => {
    try {
      const state = await client.createSession({
        checkpoint: el<HTMLInputElement>("checkpoint").value,
        dataset_dir: el<HTMLInputElement>("dataset").value,
        skeleton: el<HTMLInputElement>("skeleton").value || undefined,
        decoder: el<HTMLInputElement>("decoder").value || undefined,
        seed: Number(el<HTMLInputElement>("seed").value || "0"),
      });
      ui.sessionId = state.session_id;
      const url = new URL(location.href);
      url.searchParams.set("session", state.session_id);
      history.replaceState(null, "", url);
      el<HTMLDivElement>("setup").style.display = "none";
      await loadSuggestion();
    } catch (err) {
      toast((err as Error).message, "error");
    }
  })();
});

el<HTMLButtonElement>("retry").addEventListener("click", () => {
  void loadSuggestion();
});

el<HTMLInputElement>("radius").addEventListener("input", (event) => {
  const value = clampBrushRadius(Number((event.target as HTMLInputElement).value));
  el<HTMLSpanElement>("radius-label").textContent = `${value}px`;
});

if (ui.sessionId) {
  el<HTMLDivElement>("setup").style.display = "none";
  void loadSuggestion();
}
