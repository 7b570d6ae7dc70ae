import { describe, expect, it } from "vitest";
import { crc32, deflateSync, inflateSync } from "node:zlib";

import { decodePng, encodePngGray, encodePngRgb, toMask, toRgb } from "../src/png.js";

const inflate = (data: Uint8Array) => new Uint8Array(inflateSync(data));

function patternRgb(width: number, height: number): Uint8Array {
  const data = new Uint8Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    data[i * 3] = (i * 7) % 256;
    data[i * 3 + 1] = (i * 13) % 256;
    data[i * 3 + 2] = (i * 31) % 256;
  }
  return data;
}

/** Assemble a PNG the way a compressing encoder would: zlib IDAT, chosen filters. */
function externalPng(
  width: number,
  height: number,
  channels: number,
  pixels: Uint8Array,
  filter: number,
): Uint8Array {
  const stride = width * channels;
  const raw = new Uint8Array((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = filter;
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    for (let x = 0; x < stride; x++) {
      const cur = pixels[y * stride + x];
      const left = x >= channels ? pixels[y * stride + x - channels] : 0;
      const up = y > 0 ? pixels[(y - 1) * stride + x] : 0;
      const upLeft = y > 0 && x >= channels ? pixels[(y - 1) * stride + x - channels] : 0;
      let predicted = 0;
      if (filter === 1) predicted = left;
      else if (filter === 2) predicted = up;
      else if (filter === 3) predicted = (left + up) >> 1;
      else if (filter === 4) {
        const p = left + up - upLeft;
        const pa = Math.abs(p - left);
        const pb = Math.abs(p - up);
        const pc = Math.abs(p - upLeft);
        predicted = pa <= pb && pa <= pc ? left : pb <= pc ? up : upLeft;
      }
      row[x] = (cur - predicted) & 0xff;
    }
  }
  const chunks: Buffer[] = [Buffer.from([137, 80, 78, 71, 13, 10, 26, 10])];
  const chunk = (type: string, data: Buffer) => {
    const head = Buffer.alloc(4);
    head.writeUInt32BE(data.length);
    const typed = Buffer.concat([Buffer.from(type, "ascii"), data]);
    const crc = Buffer.alloc(4);
    crc.writeUInt32BE(Number(crc32(typed)) >>> 0);
    chunks.push(head, typed, crc);
  };
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr[8] = 8;
  ihdr[9] = channels === 1 ? 0 : channels === 3 ? 2 : 6;
  chunk("IHDR", ihdr);
  chunk("IDAT", deflateSync(raw));
  chunk("IEND", Buffer.alloc(0));
  return new Uint8Array(Buffer.concat(chunks));
}

describe("png codec", () => {
  it("round-trips RGB pixels", () => {
    const pixels = patternRgb(21, 13);
    const decoded = decodePng(encodePngRgb(21, 13, pixels), inflate);
    expect(decoded.width).toBe(21);
    expect(decoded.height).toBe(13);
    expect(decoded.channels).toBe(3);
    expect([...decoded.data]).toEqual([...pixels]);
  });

  it("round-trips grayscale pixels", () => {
    const pixels = new Uint8Array(64).map((_, i) => (i * 29) % 256);
    const decoded = decodePng(encodePngGray(8, 8, pixels), inflate);
    expect(decoded.channels).toBe(1);
    expect([...decoded.data]).toEqual([...pixels]);
  });

  it("emits identical bytes for identical input", () => {
    const pixels = patternRgb(33, 9);
    const a = encodePngRgb(33, 9, pixels);
    const b = encodePngRgb(33, 9, pixels.slice());
    expect(Buffer.compare(Buffer.from(a), Buffer.from(b))).toBe(0);
  });

  it("splits rows larger than one stored block", () => {
    // 200x120 RGB = 72_120 raw bytes, forcing multiple 65535-byte blocks
    const pixels = patternRgb(200, 120);
    const decoded = decodePng(encodePngRgb(200, 120, pixels), inflate);
    expect([...decoded.data]).toEqual([...pixels]);
  });

  for (const filter of [0, 1, 2, 3, 4]) {
    it(`decodes zlib-compressed PNGs with filter ${filter}`, () => {
      const pixels = patternRgb(17, 11);
      const decoded = decodePng(externalPng(17, 11, 3, pixels, filter), inflate);
      expect([...decoded.data]).toEqual([...pixels]);
    });
  }

  it("expands grayscale and RGBA to RGB", () => {
    const gray = new Uint8Array([0, 128, 255, 7]);
    const fromGray = toRgb(decodePng(externalPng(2, 2, 1, gray, 0), inflate));
    expect([...fromGray]).toEqual([0, 0, 0, 128, 128, 128, 255, 255, 255, 7, 7, 7]);

    const rgba = new Uint8Array([10, 20, 30, 255, 40, 50, 60, 255]);
    const fromRgba = toRgb(decodePng(externalPng(2, 1, 4, rgba, 0), inflate));
    expect([...fromRgba]).toEqual([10, 20, 30, 40, 50, 60]);
  });

  it("thresholds masks at half gray", () => {
    const gray = new Uint8Array([0, 127, 128, 255]);
    const mask = toMask(decodePng(encodePngGray(4, 1, gray), inflate));
    expect([...mask]).toEqual([0, 0, 1, 1]);
  });

  it("rejects non-PNG payloads", () => {
    expect(() => decodePng(new Uint8Array([1, 2, 3]), inflate)).toThrow(/not a PNG/);
  });
});
