import { describe, expect, it } from "vitest";

import {
  clipPath,
  maskCount,
  pointInPolygon,
  rasterizePath,
  unionMask,
} from "../src/geometry.js";
import { clampBrushRadius, type SelectionPath } from "../src/types.js";

function lasso(points: [number, number][]): SelectionPath {
  return { kind: "lasso", closed: true, points: points.map(([x, y]) => ({ x, y })) };
}

// deterministic LCG so the oracle comparison reproduces across runs
function lcg(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}

describe("lasso rasterization", () => {
  it("fills an axis-aligned rectangle exactly", () => {
    const mask = rasterizePath(lasso([[2, 2], [7, 2], [7, 5], [2, 5]]), 10, 8);
    for (let y = 0; y < 8; y++) {
      for (let x = 0; x < 10; x++) {
        const inside = x >= 2 && x < 7 && y >= 2 && y < 5;
        expect(mask[y * 10 + x], `pixel ${x},${y}`).toBe(inside ? 1 : 0);
      }
    }
  });

  it("matches the even-odd point-in-polygon oracle on random polygons", () => {
    const rand = lcg(7);
    for (let trial = 0; trial < 25; trial++) {
      const n = 3 + Math.floor(rand() * 7);
      const points = Array.from({ length: n }, () => ({
        x: rand() * 40,
        y: rand() * 30,
      }));
      const mask = rasterizePath({ kind: "lasso", closed: true, points }, 40, 30);
      for (let y = 0; y < 30; y++) {
        for (let x = 0; x < 40; x++) {
          const oracle = pointInPolygon(points, x + 0.5, y + 0.5);
          expect(Boolean(mask[y * 40 + x]), `trial ${trial} pixel ${x},${y}`).toBe(oracle);
        }
      }
    }
  });

  it("clips out-of-bounds points to the canvas", () => {
    const wild = lasso([[-50, -50], [200, -50], [200, 200], [-50, 200]]);
    const mask = rasterizePath(wild, 16, 16);
    expect(maskCount(mask)).toBe(16 * 16);
    const clipped = clipPath(wild, 16, 16);
    for (const p of clipped.points) {
      expect(p.x).toBeGreaterThanOrEqual(0);
      expect(p.x).toBeLessThanOrEqual(16);
      expect(p.y).toBeGreaterThanOrEqual(0);
      expect(p.y).toBeLessThanOrEqual(16);
    }
  });

  it("rejects closed paths with fewer than three points", () => {
    expect(() => rasterizePath(lasso([[1, 1], [5, 5]]), 10, 10)).toThrow(/3 points/);
  });

  it("rejects non-finite coordinates", () => {
    const bad = lasso([[1, 1], [5, NaN], [5, 5]]);
    expect(() => rasterizePath(bad, 10, 10)).toThrow(/non-finite/);
  });
});

describe("brush strokes", () => {
  it("clamps the radius into [2, 64]", () => {
    expect(clampBrushRadius(0)).toBe(2);
    expect(clampBrushRadius(1.5)).toBe(2);
    expect(clampBrushRadius(30)).toBe(30);
    expect(clampBrushRadius(1000)).toBe(64);
    expect(clampBrushRadius(NaN)).toBe(2);
  });

  it("stamps a disk of roughly pi r^2 pixels", () => {
    const path: SelectionPath = {
      kind: "brush",
      closed: false,
      points: [{ x: 32, y: 32 }],
      radius: 10,
    };
    const count = maskCount(rasterizePath(path, 64, 64));
    expect(count).toBeGreaterThan(Math.PI * 100 * 0.9);
    expect(count).toBeLessThan(Math.PI * 100 * 1.1);
  });

  it("leaves no gaps along a long segment", () => {
    const path: SelectionPath = {
      kind: "brush",
      closed: false,
      points: [{ x: 5, y: 5 }, { x: 58, y: 50 }],
      radius: 4,
    };
    const mask = rasterizePath(path, 64, 64);
    for (let t = 0; t <= 100; t++) {
      const x = Math.round(5 + (53 * t) / 100);
      const y = Math.round(5 + (45 * t) / 100);
      expect(mask[y * 64 + x], `sample ${t}`).toBe(1);
    }
  });
});

describe("mask union", () => {
  it("is idempotent and order-independent", () => {
    const a = rasterizePath(lasso([[1, 1], [6, 1], [6, 6], [1, 6]]), 12, 12);
    const b = rasterizePath(lasso([[4, 4], [10, 4], [10, 10], [4, 10]]), 12, 12);
    const ab = a.slice();
    unionMask(ab, b);
    const ba = b.slice();
    unionMask(ba, a);
    expect([...ab]).toEqual([...ba]);
    const again = ab.slice();
    unionMask(again, b);
    expect([...again]).toEqual([...ab]);
  });
});
