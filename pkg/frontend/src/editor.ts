/** Editor session core: working image, selection mask, edit log, undo.
 *
 * Deliberately DOM-free.  The browser shell feeds it pointer-built paths
 * and decoded bitmaps; tests drive it with scripted ones.  All state needed
 * to rebuild the submitted image lives in the log (the undo stack holds
 * byte snapshots only as a convenience).
 */

import {
  bitmapsEqual,
  cloneBitmap,
  compositeMasked,
  entryMask,
  fillMasked,
  replayEditLog,
  type Bitmap,
  type CandidateSource,
} from "./bitmap.js";
import { unionMask, emptyMask, maskAny, rasterizePath } from "./geometry.js";
import { encodePngGray, encodePngRgb } from "./png.js";
import { bytesToBase64 } from "./b64.js";
import { WHITE, type EditLogEntry, type Rgb, type SelectionPath } from "./types.js";
import type { WireLogEntry } from "./api.js";

interface Snapshot {
  image: Bitmap;
  mask: Uint8Array;
  logLength: number;
}

export interface Submission {
  imagePng: Uint8Array;
  maskPng: Uint8Array;
  editLog: WireLogEntry[];
}

export class EditorCore {
  readonly pristine: Bitmap;
  working: Bitmap;
  mask: Uint8Array;
  readonly log: EditLogEntry[] = [];
  private history: Snapshot[] = [];

  constructor(pristine: Bitmap) {
    this.pristine = cloneBitmap(pristine);
    this.working = cloneBitmap(pristine);
    this.mask = emptyMask(pristine.width, pristine.height);
  }

  get width(): number {
    return this.pristine.width;
  }

  get height(): number {
    return this.pristine.height;
  }

  get dirty(): boolean {
    return this.log.length > 0;
  }

  private snapshot(): void {
    this.history.push({
      image: cloneBitmap(this.working),
      mask: this.mask.slice(),
      logLength: this.log.length,
    });
  }

  private record(entry: EditLogEntry, regionMask: Uint8Array): void {
    unionMask(this.mask, regionMask);
    this.log.push(entry);
  }

  /** Rasterize a path against this editor's canvas size. */
  regionMask(path: SelectionPath): Uint8Array {
    return rasterizePath(path, this.width, this.height);
  }

  applyBackgroundFill(path: SelectionPath): void {
    const mask = this.regionMask(path);
    this.snapshot();
    fillMasked(this.working, mask, WHITE);
    this.record({ tool: "background", path }, mask);
  }

  applyColorFill(path: SelectionPath, color: Rgb): void {
    const mask = this.regionMask(path);
    this.snapshot();
    fillMasked(this.working, mask, color);
    this.record({ tool: "inpaint", path, color }, mask);
  }

  /** Composite a picked diffusion candidate into the path's region. */
  applyCandidate(path: SelectionPath, prompt: string, index: number, candidate: Bitmap): void {
    const mask = this.regionMask(path);
    this.snapshot();
    compositeMasked(this.working, candidate, mask);
    this.record({ tool: "diffusion_inpaint", path, prompt, candidate: index }, mask);
  }

  /** Revert the latest edit; returns false when there is nothing to undo. */
  undo(): boolean {
    const prior = this.history.pop();
    if (!prior) return false;
    this.working = prior.image;
    this.mask = prior.mask;
    this.log.length = prior.logLength;
    return true;
  }

  /** The PNGs and serialized log the service expects on /edits. */
  buildSubmission(): Submission {
    const editLog: WireLogEntry[] = this.log.map((entry) => {
      const mask = entryMask(entry, this.width, this.height);
      const gray = new Uint8Array(mask.length);
      for (let i = 0; i < mask.length; i++) gray[i] = mask[i] ? 255 : 0;
      const wire: WireLogEntry = {
        tool: entry.tool,
        mask: bytesToBase64(encodePngGray(this.width, this.height, gray)),
        path: serializePath(entry.path),
      };
      if (entry.color) wire.color = [...entry.color];
      if (entry.prompt !== undefined) wire.prompt = entry.prompt;
      if (entry.candidate !== undefined) wire.candidate = entry.candidate;
      return wire;
    });
    const grayMask = new Uint8Array(this.mask.length);
    for (let i = 0; i < this.mask.length; i++) grayMask[i] = this.mask[i] ? 255 : 0;
    return {
      imagePng: encodePngRgb(this.width, this.height, this.working.data),
      maskPng: encodePngGray(this.width, this.height, grayMask),
      editLog,
    };
  }

  /** True when the working image matches a fresh replay of the log. */
  selfCheck(candidates?: CandidateSource): boolean {
    const replay = replayEditLog(this.pristine, this.log, candidates);
    return (
      bitmapsEqual(replay.image, this.working) &&
      replay.mask.every((v, i) => v === this.mask[i])
    );
  }

  hasSelection(path: SelectionPath): boolean {
    return maskAny(this.regionMask(path));
  }

  /** Unsent work, serializable into browser storage. */
  serializeDraft(): string {
    return JSON.stringify({ version: 1, log: this.log.map(draftEntry) });
  }

  /**
   * Rebuild an editor from a stored draft by replaying its log over the
   * pristine render.  Diffusion entries need their candidate images again,
   * supplied by the caller (the service regenerates them deterministically).
   */
  static restoreDraft(pristine: Bitmap, draft: string, candidates?: CandidateSource): EditorCore {
    const parsed = JSON.parse(draft) as { version?: number; log?: unknown };
    if (parsed.version !== 1 || !Array.isArray(parsed.log)) {
      throw new Error("unrecognized draft payload");
    }
    const editor = new EditorCore(pristine);
    for (const raw of parsed.log) {
      const entry = parseDraftEntry(raw);
      switch (entry.tool) {
        case "background":
          editor.applyBackgroundFill(entry.path);
          break;
        case "inpaint":
          editor.applyColorFill(entry.path, entry.color as Rgb);
          break;
        case "diffusion_inpaint": {
          if (!candidates) throw new Error("draft has diffusion edits; no candidate source");
          const bitmap = candidates(entry, editor.log.length);
          editor.applyCandidate(entry.path, entry.prompt ?? "", entry.candidate ?? 0, bitmap);
          break;
        }
      }
    }
    return editor;
  }
}

function serializePath(path: SelectionPath): Record<string, unknown> {
  const out: Record<string, unknown> = {
    kind: path.kind,
    closed: path.closed,
    points: path.points.map((p) => [p.x, p.y]),
  };
  if (path.radius !== undefined) out.radius = path.radius;
  return out;
}

function draftEntry(entry: EditLogEntry): Record<string, unknown> {
  const out: Record<string, unknown> = {
    tool: entry.tool,
    path: serializePath(entry.path),
  };
  if (entry.color) out.color = [...entry.color];
  if (entry.prompt !== undefined) out.prompt = entry.prompt;
  if (entry.candidate !== undefined) out.candidate = entry.candidate;
  return out;
}

function parseDraftEntry(raw: unknown): EditLogEntry {
  const rec = raw as Record<string, unknown>;
  const pathRec = rec.path as Record<string, unknown>;
  const points = (pathRec.points as [number, number][]).map(([x, y]) => ({ x, y }));
  const path: SelectionPath = {
    kind: pathRec.kind as "lasso" | "brush",
    closed: Boolean(pathRec.closed),
    points,
  };
  if (pathRec.radius !== undefined) path.radius = Number(pathRec.radius);
  const entry: EditLogEntry = { tool: rec.tool as EditLogEntry["tool"], path };
  if (rec.color) entry.color = rec.color as Rgb;
  if (rec.prompt !== undefined) entry.prompt = String(rec.prompt);
  if (rec.candidate !== undefined) entry.candidate = Number(rec.candidate);
  return entry;
}
