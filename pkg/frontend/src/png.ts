/** Minimal PNG codec.
 *
 * Encoding writes 8-bit RGB or grayscale with filter 0 rows and *stored*
 * (uncompressed) deflate blocks.  Byte-for-byte output is fixed by this
 * file alone, which is what lets the edit-log replay check compare whole
 * PNG files instead of pixels; the service accepts any valid PNG, so the
 * lack of compression only costs upload size.
 *
 * Decoding handles what the service emits (8-bit gray/RGB/RGBA, not
 * interlaced).  Inflate is injected by the caller: node tests pass
 * zlib.inflateSync, the browser app decodes through a canvas instead.
 */

export interface DecodedPng {
  width: number;
  height: number;
  channels: number; // 1, 2, 3 or 4
  data: Uint8Array; // channels * width * height
}

export type Inflate = (compressed: Uint8Array) => Uint8Array;

const SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(...parts: Uint8Array[]): number {
  let c = 0xffffffff;
  for (const part of parts) {
    for (let i = 0; i < part.length; i++) {
      c = CRC_TABLE[(c ^ part[i]) & 0xff] ^ (c >>> 8);
    }
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(data: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < data.length; i++) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(value: number): Uint8Array {
  return new Uint8Array([(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff]);
}

function chunk(type: string, data: Uint8Array): Uint8Array[] {
  const typeBytes = new Uint8Array([...type].map((ch) => ch.charCodeAt(0)));
  return [u32be(data.length), typeBytes, data, u32be(crc32(typeBytes, data))];
}

/** Raw scanlines -> zlib stream of stored deflate blocks. */
function storedZlib(raw: Uint8Array): Uint8Array {
  const blocks = Math.max(1, Math.ceil(raw.length / 65535));
  const out = new Uint8Array(2 + blocks * 5 + raw.length + 4);
  out[0] = 0x78; // 32k window, deflate
  out[1] = 0x01; // fastest-compression hint, checksum bits valid
  let pos = 2;
  for (let b = 0; b < blocks; b++) {
    const start = b * 65535;
    const piece = raw.subarray(start, Math.min(start + 65535, raw.length));
    out[pos++] = b === blocks - 1 ? 1 : 0; // BFINAL, BTYPE=00 (stored)
    out[pos++] = piece.length & 0xff;
    out[pos++] = piece.length >>> 8;
    out[pos++] = ~piece.length & 0xff;
    out[pos++] = (~piece.length >>> 8) & 0xff;
    out.set(piece, pos);
    pos += piece.length;
  }
  out.set(u32be(adler32(raw)), pos);
  return out;
}

function encode(width: number, height: number, pixels: Uint8Array, channels: 1 | 3): Uint8Array {
  if (pixels.length !== width * height * channels) {
    throw new Error(
      `pixel buffer is ${pixels.length} bytes, expected ${width * height * channels}`,
    );
  }
  const stride = width * channels;
  const raw = new Uint8Array((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0; // filter: None
    raw.set(pixels.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }
  const ihdr = new Uint8Array(13);
  ihdr.set(u32be(width), 0);
  ihdr.set(u32be(height), 4);
  ihdr[8] = 8; // bit depth
  ihdr[9] = channels === 3 ? 2 : 0; // color type
  const parts = [
    new Uint8Array(SIGNATURE),
    ...chunk("IHDR", ihdr),
    ...chunk("IDAT", storedZlib(raw)),
    ...chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let pos = 0;
  for (const part of parts) {
    out.set(part, pos);
    pos += part.length;
  }
  return out;
}

export function encodePngRgb(width: number, height: number, pixels: Uint8Array): Uint8Array {
  return encode(width, height, pixels, 3);
}

/** Grayscale encode; masks go out as 0 / 255. */
export function encodePngGray(width: number, height: number, pixels: Uint8Array): Uint8Array {
  return encode(width, height, pixels, 1);
}

const CHANNELS_BY_COLOR_TYPE: Record<number, number> = { 0: 1, 2: 3, 4: 2, 6: 4 };

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

export function decodePng(bytes: Uint8Array, inflate: Inflate): DecodedPng {
  for (let i = 0; i < SIGNATURE.length; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let pos = 8;
  let width = 0;
  let height = 0;
  let channels = 0;
  const idat: Uint8Array[] = [];
  while (pos + 8 <= bytes.length) {
    const length = view.getUint32(pos);
    const type = String.fromCharCode(bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]);
    const data = bytes.subarray(pos + 8, pos + 8 + length);
    pos += 12 + length; // skip CRC
    if (type === "IHDR") {
      width = (data[0] << 24 | data[1] << 16 | data[2] << 8 | data[3]) >>> 0;
      height = (data[4] << 24 | data[5] << 16 | data[6] << 8 | data[7]) >>> 0;
      const depth = data[8];
      const colorType = data[9];
      const interlace = data[12];
      channels = CHANNELS_BY_COLOR_TYPE[colorType] ?? 0;
      if (depth !== 8 || channels === 0) {
        throw new Error(`unsupported PNG format (depth ${depth}, color type ${colorType})`);
      }
      if (interlace !== 0) throw new Error("interlaced PNGs are not supported");
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
  }
  if (!width || !height || !channels) throw new Error("PNG has no IHDR");
  const compressed = new Uint8Array(idat.reduce((n, d) => n + d.length, 0));
  let at = 0;
  for (const d of idat) {
    compressed.set(d, at);
    at += d.length;
  }
  const raw = inflate(compressed);
  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) {
    throw new Error(`decompressed size ${raw.length}, expected ${(stride + 1) * height}`);
  }
  const data = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const out = y * stride;
    const prev = out - stride;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? data[out + x - channels] : 0;
      const up = y > 0 ? data[prev + x] : 0;
      const upLeft = y > 0 && x >= channels ? data[prev + x - channels] : 0;
      let value = row[x];
      switch (filter) {
        case 0:
          break;
        case 1:
          value += left;
          break;
        case 2:
          value += up;
          break;
        case 3:
          value += (left + up) >> 1;
          break;
        case 4:
          value += paeth(left, up, upLeft);
          break;
        default:
          throw new Error(`unknown PNG filter ${filter}`);
      }
      data[out + x] = value & 0xff;
    }
  }
  return { width, height, channels, data };
}

/** Flatten any decoded layout to tightly packed RGB. */
export function toRgb(png: DecodedPng): Uint8Array {
  const { width, height, channels, data } = png;
  if (channels === 3) return data;
  const out = new Uint8Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    const src = i * channels;
    if (channels === 1 || channels === 2) {
      out[i * 3] = out[i * 3 + 1] = out[i * 3 + 2] = data[src];
    } else {
      out[i * 3] = data[src];
      out[i * 3 + 1] = data[src + 1];
      out[i * 3 + 2] = data[src + 2];
    }
  }
  return out;
}

/** Decoded grayscale/RGB -> boolean mask via the >= 50% gray threshold. */
export function toMask(png: DecodedPng): Uint8Array {
  const { width, height, channels, data } = png;
  const out = new Uint8Array(width * height);
  for (let i = 0; i < width * height; i++) {
    out[i] = data[i * channels] >= 128 ? 1 : 0;
  }
  return out;
}
