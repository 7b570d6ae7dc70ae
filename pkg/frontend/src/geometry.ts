/** Path rasterization: lasso polygons and round brush strokes to pixel masks.
 *
 * Masks are Uint8Array(width * height), 1 = selected.  A pixel belongs to a
 * lasso when its center (x + 0.5, y + 0.5) is inside the polygon under the
 * even-odd rule; scanline fill and the point-in-polygon test below agree
 * exactly, including centers that land on an intersection (half-open spans).
 */

import {
  type Point,
  type SelectionPath,
  clampBrushRadius,
} from "./types.js";

export function emptyMask(width: number, height: number): Uint8Array {
  return new Uint8Array(width * height);
}

/** Clamp every point into [0, w] x [0, h] (spec: out-of-bounds points clip). */
export function clipPath(path: SelectionPath, width: number, height: number): SelectionPath {
  const points = path.points.map((p) => ({
    x: Math.min(width, Math.max(0, p.x)),
    y: Math.min(height, Math.max(0, p.y)),
  }));
  return { ...path, points };
}

export function validatePath(path: SelectionPath): void {
  if (path.kind === "lasso") {
    if (!path.closed) throw new Error("lasso paths must be closed");
    if (path.points.length < 3) {
      throw new Error(`closed path needs at least 3 points, got ${path.points.length}`);
    }
  } else {
    if (path.points.length < 1) throw new Error("brush stroke has no points");
  }
  for (const p of path.points) {
    if (!Number.isFinite(p.x) || !Number.isFinite(p.y)) {
      throw new Error("path contains non-finite coordinates");
    }
  }
}

/** Even-odd point-in-polygon at an arbitrary query point. */
export function pointInPolygon(points: Point[], qx: number, qy: number): boolean {
  let inside = false;
  const n = points.length;
  for (let i = 0, j = n - 1; i < n; j = i++) {
    const yi = points[i].y;
    const yj = points[j].y;
    if (yi > qy === yj > qy) continue;
    const xint = points[i].x + ((qy - yi) * (points[j].x - points[i].x)) / (yj - yi);
    if (qx < xint) inside = !inside;
  }
  return inside;
}

function fillPolygon(points: Point[], width: number, height: number, out: Uint8Array): void {
  let yMin = Infinity;
  let yMax = -Infinity;
  for (const p of points) {
    yMin = Math.min(yMin, p.y);
    yMax = Math.max(yMax, p.y);
  }
  const rowFirst = Math.max(0, Math.ceil(yMin - 0.5));
  const rowLast = Math.min(height - 1, Math.floor(yMax - 0.5));
  const xs: number[] = [];
  for (let row = rowFirst; row <= rowLast; row++) {
    const cy = row + 0.5;
    xs.length = 0;
    const n = points.length;
    for (let i = 0, j = n - 1; i < n; j = i++) {
      const yi = points[i].y;
      const yj = points[j].y;
      if (yi > cy === yj > cy) continue;
      xs.push(points[i].x + ((cy - yi) * (points[j].x - points[i].x)) / (yj - yi));
    }
    xs.sort((a, b) => a - b);
    for (let k = 0; k + 1 < xs.length; k += 2) {
      // centers in [xs[k], xs[k+1]): matches the strict `qx < xint` test
      const from = Math.max(0, Math.ceil(xs[k] - 0.5));
      const to = Math.min(width - 1, Math.ceil(xs[k + 1] - 0.5) - 1);
      for (let x = from; x <= to; x++) out[row * width + x] = 1;
    }
  }
}

function stampDisk(cx: number, cy: number, r: number, width: number, height: number, out: Uint8Array): void {
  const r2 = r * r;
  const rowFirst = Math.max(0, Math.floor(cy - r - 0.5));
  const rowLast = Math.min(height - 1, Math.ceil(cy + r - 0.5));
  for (let y = rowFirst; y <= rowLast; y++) {
    const dy = y + 0.5 - cy;
    const span = r2 - dy * dy;
    if (span < 0) continue;
    const half = Math.sqrt(span);
    const from = Math.max(0, Math.ceil(cx - half - 0.5));
    const to = Math.min(width - 1, Math.floor(cx + half - 0.5));
    for (let x = from; x <= to; x++) out[y * width + x] = 1;
  }
}

function strokeBrush(points: Point[], radius: number, width: number, height: number, out: Uint8Array): void {
  const r = clampBrushRadius(radius);
  let prev = points[0];
  stampDisk(prev.x, prev.y, r, width, height, out);
  for (let i = 1; i < points.length; i++) {
    const cur = points[i];
    const dist = Math.hypot(cur.x - prev.x, cur.y - prev.y);
    // stamp along the segment densely enough that the stroke has no gaps
    const steps = Math.max(1, Math.ceil(dist / (r * 0.5)));
    for (let s = 1; s <= steps; s++) {
      const t = s / steps;
      stampDisk(prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y), r, width, height, out);
    }
    prev = cur;
  }
}

/** Rasterize one path to a fresh mask; clips, then validates. */
export function rasterizePath(path: SelectionPath, width: number, height: number): Uint8Array {
  const clipped = clipPath(path, width, height);
  validatePath(clipped);
  const mask = emptyMask(width, height);
  if (clipped.kind === "lasso") {
    fillPolygon(clipped.points, width, height, mask);
  } else {
    strokeBrush(clipped.points, clipped.radius ?? 0, width, height, mask);
  }
  return mask;
}

/** In-place union: acc |= add. */
export function unionMask(acc: Uint8Array, add: Uint8Array): void {
  if (acc.length !== add.length) throw new Error("mask sizes differ");
  for (let i = 0; i < acc.length; i++) if (add[i]) acc[i] = 1;
}

export function maskAny(mask: Uint8Array): boolean {
  for (let i = 0; i < mask.length; i++) if (mask[i]) return true;
  return false;
}

export function maskCount(mask: Uint8Array): number {
  let count = 0;
  for (let i = 0; i < mask.length; i++) if (mask[i]) count++;
  return count;
}
