/** RGB byte images and the mask-confined paint operations.
 *
 * Everything here works on Uint8Array pixels, never floats, so an edit is
 * reproducible bit for bit: replaying the log over the pristine render
 * rebuilds the submitted image exactly.
 */

import { rasterizePath, unionMask, emptyMask } from "./geometry.js";
import { WHITE, type EditLogEntry, type Rgb, type SelectionPath } from "./types.js";

export interface Bitmap {
  width: number;
  height: number;
  data: Uint8Array; // RGB, 3 bytes per pixel
}

export function makeBitmap(width: number, height: number, data?: Uint8Array): Bitmap {
  const size = width * height * 3;
  if (data === undefined) data = new Uint8Array(size);
  if (data.length !== size) {
    throw new Error(`bitmap buffer is ${data.length} bytes, expected ${size}`);
  }
  return { width, height, data };
}

export function cloneBitmap(src: Bitmap): Bitmap {
  return { width: src.width, height: src.height, data: src.data.slice() };
}

export function bitmapsEqual(a: Bitmap, b: Bitmap): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  return a.data.length === b.data.length && a.data.every((v, i) => v === b.data[i]);
}

/** Set masked pixels to a flat color; pixels outside the mask are untouched. */
export function fillMasked(bitmap: Bitmap, mask: Uint8Array, color: Rgb): void {
  if (mask.length !== bitmap.width * bitmap.height) throw new Error("mask size mismatch");
  const [r, g, b] = color;
  for (let i = 0; i < mask.length; i++) {
    if (!mask[i]) continue;
    bitmap.data[i * 3] = r;
    bitmap.data[i * 3 + 1] = g;
    bitmap.data[i * 3 + 2] = b;
  }
}

/** Copy candidate pixels into the masked region only. */
export function compositeMasked(bitmap: Bitmap, candidate: Bitmap, mask: Uint8Array): void {
  if (candidate.width !== bitmap.width || candidate.height !== bitmap.height) {
    throw new Error("candidate dimensions differ from the target");
  }
  if (mask.length !== bitmap.width * bitmap.height) throw new Error("mask size mismatch");
  for (let i = 0; i < mask.length; i++) {
    if (!mask[i]) continue;
    bitmap.data[i * 3] = candidate.data[i * 3];
    bitmap.data[i * 3 + 1] = candidate.data[i * 3 + 1];
    bitmap.data[i * 3 + 2] = candidate.data[i * 3 + 2];
  }
}

/** Resolves candidate pixels for diffusion entries during a replay. */
export type CandidateSource = (entry: EditLogEntry, index: number) => Bitmap;

export interface ReplayResult {
  image: Bitmap;
  mask: Uint8Array; // union of every entry's rasterized path
}

export function entryMask(entry: EditLogEntry, width: number, height: number): Uint8Array {
  return rasterizePath(entry.path, width, height);
}

function applyEntry(
  image: Bitmap,
  entry: EditLogEntry,
  index: number,
  candidates: CandidateSource | undefined,
): Uint8Array {
  const mask = entryMask(entry, image.width, image.height);
  switch (entry.tool) {
    case "background":
      fillMasked(image, mask, WHITE);
      break;
    case "inpaint":
      if (!entry.color) throw new Error(`edit ${index}: color fill without a color`);
      fillMasked(image, mask, entry.color);
      break;
    case "diffusion_inpaint": {
      if (candidates === undefined) {
        throw new Error(`edit ${index}: diffusion entry needs a candidate source`);
      }
      compositeMasked(image, candidates(entry, index), mask);
      break;
    }
  }
  return mask;
}

/**
 * Rebuild the edited image from the pristine render and the log.  This is
 * the replay invariant the editor is built around: equality with the
 * interactive result is asserted in tests on the full PNG bytes.
 */
export function replayEditLog(
  pristine: Bitmap,
  log: EditLogEntry[],
  candidates?: CandidateSource,
): ReplayResult {
  const image = cloneBitmap(pristine);
  const union = emptyMask(pristine.width, pristine.height);
  log.forEach((entry, index) => {
    unionMask(union, applyEntry(image, entry, index, candidates));
  });
  return { image, mask: union };
}

export { applyEntry };
export type { SelectionPath };
