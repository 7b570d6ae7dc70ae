import { describe, expect, it } from "vitest";

import {
  bitmapsEqual,
  cloneBitmap,
  compositeMasked,
  fillMasked,
  makeBitmap,
  replayEditLog,
  type Bitmap,
} from "../src/bitmap.js";
import { rasterizePath, maskCount } from "../src/geometry.js";
import type { EditLogEntry, SelectionPath } from "../src/types.js";

function lasso(points: [number, number][]): SelectionPath {
  return { kind: "lasso", closed: true, points: points.map(([x, y]) => ({ x, y })) };
}

function gradient(width: number, height: number): Bitmap {
  const bmp = makeBitmap(width, height);
  for (let i = 0; i < width * height; i++) {
    bmp.data[i * 3] = i % 256;
    bmp.data[i * 3 + 1] = (i * 3) % 256;
    bmp.data[i * 3 + 2] = (255 - i) % 256;
  }
  return bmp;
}

describe("masked fills", () => {
  it("never touches pixels outside the mask", () => {
    const bmp = gradient(24, 24);
    const before = cloneBitmap(bmp);
    const mask = rasterizePath(lasso([[4, 4], [15, 6], [12, 18]]), 24, 24);
    fillMasked(bmp, mask, [9, 200, 9]);
    for (let i = 0; i < mask.length; i++) {
      for (let c = 0; c < 3; c++) {
        const got = bmp.data[i * 3 + c];
        const expected = mask[i] ? [9, 200, 9][c] : before.data[i * 3 + c];
        expect(got, `pixel ${i} channel ${c}`).toBe(expected);
      }
    }
  });

  it("composites candidate pixels only under the mask", () => {
    const bmp = gradient(16, 16);
    const before = cloneBitmap(bmp);
    const candidate = makeBitmap(16, 16, new Uint8Array(16 * 16 * 3).fill(77));
    const mask = rasterizePath(lasso([[2, 2], [9, 2], [9, 9], [2, 9]]), 16, 16);
    compositeMasked(bmp, candidate, mask);
    for (let i = 0; i < mask.length; i++) {
      expect(bmp.data[i * 3]).toBe(mask[i] ? 77 : before.data[i * 3]);
    }
  });

  it("rejects mismatched candidate sizes", () => {
    const bmp = gradient(8, 8);
    const tiny = makeBitmap(4, 4);
    expect(() => compositeMasked(bmp, tiny, new Uint8Array(64))).toThrow(/dimensions/);
  });
});

describe("edit-log replay", () => {
  it("reproduces a scripted fill sequence and the union mask", () => {
    const pristine = gradient(32, 32);
    const log: EditLogEntry[] = [
      { tool: "background", path: lasso([[1, 1], [12, 1], [12, 12], [1, 12]]) },
      { tool: "inpaint", path: lasso([[8, 8], [20, 10], [15, 24]]), color: [200, 30, 30] },
      {
        tool: "inpaint",
        path: { kind: "brush", closed: false, points: [{ x: 25, y: 5 }, { x: 28, y: 28 }], radius: 3 },
        color: [30, 30, 220],
      },
    ];
    const first = replayEditLog(pristine, log);
    const second = replayEditLog(pristine, log);
    expect(bitmapsEqual(first.image, second.image)).toBe(true);
    expect([...first.mask]).toEqual([...second.mask]);

    // the mask is the union of the per-entry rasterizations
    const union = new Uint8Array(32 * 32);
    for (const entry of log) {
      const m = rasterizePath(entry.path, 32, 32);
      for (let i = 0; i < m.length; i++) if (m[i]) union[i] = 1;
    }
    expect([...first.mask]).toEqual([...union]);
    expect(maskCount(first.mask)).toBeGreaterThan(0);

    // and nothing leaked outside it
    for (let i = 0; i < union.length; i++) {
      if (union[i]) continue;
      for (let c = 0; c < 3; c++) {
        expect(first.image.data[i * 3 + c]).toBe(pristine.data[i * 3 + c]);
      }
    }
  });

  it("later entries overwrite earlier ones where they overlap", () => {
    const pristine = gradient(16, 16);
    const whole = lasso([[0, 0], [16, 0], [16, 16], [0, 16]]);
    const { image } = replayEditLog(pristine, [
      { tool: "inpaint", path: whole, color: [1, 2, 3] },
      { tool: "background", path: whole },
    ]);
    expect(image.data.every((v) => v === 255)).toBe(true);
  });

  it("feeds diffusion entries from the candidate source", () => {
    const pristine = gradient(12, 12);
    const candidate = makeBitmap(12, 12, new Uint8Array(12 * 12 * 3).fill(42));
    const entry: EditLogEntry = {
      tool: "diffusion_inpaint",
      path: lasso([[3, 3], [9, 3], [9, 9], [3, 9]]),
      prompt: "patch",
      candidate: 1,
    };
    const { image } = replayEditLog(pristine, [entry], (e, index) => {
      expect(e).toBe(entry);
      expect(index).toBe(0);
      return candidate;
    });
    const mask = rasterizePath(entry.path, 12, 12);
    for (let i = 0; i < mask.length; i++) {
      expect(image.data[i * 3]).toBe(mask[i] ? 42 : pristine.data[i * 3]);
    }
    expect(() => replayEditLog(pristine, [entry])).toThrow(/candidate source/);
  });
});
