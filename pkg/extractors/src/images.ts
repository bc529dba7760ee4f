/**
 * Minimal grayscale image support: binary PPM (P6) decode/encode, bilinear
 * sampling, resizing, and inverse-mapped similarity warps. Pixel values are
 * kept as float intensities in [0, 255].
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major intensities, length width * height. */
  data: Float32Array;
}

export function makeImage(width: number, height: number): GrayImage {
  return { width, height, data: new Float32Array(width * height) };
}

/**
 * Decode a binary PPM (P6) file to grayscale via the Rec. 601 luma weights.
 */
export function readPpm(path: string): GrayImage {
  const buf = readFileSync(path);
  let pos = 0;
  const token = (): string => {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++;
    if (buf[pos] === 0x23) {
      // comment line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      return token();
    }
    const start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    return buf.toString("ascii", start, pos);
  };
  if (token() !== "P6") {
    throw new Error(`${path}: not a binary PPM (P6) file`);
  }
  const width = Number(token());
  const height = Number(token());
  const maxVal = Number(token());
  if (!width || !height || maxVal !== 255) {
    throw new Error(`${path}: unsupported PPM header`);
  }
  pos++; // single whitespace byte after maxval
  const expected = width * height * 3;
  if (buf.length - pos < expected) {
    throw new Error(`${path}: truncated pixel data`);
  }
  const img = makeImage(width, height);
  for (let i = 0; i < width * height; i++) {
    const r = buf[pos + 3 * i];
    const g = buf[pos + 3 * i + 1];
    const b = buf[pos + 3 * i + 2];
    img.data[i] = 0.299 * r + 0.587 * g + 0.114 * b;
  }
  return img;
}

/**
 * Encode a grayscale image as a binary PPM (P6), replicating the intensity
 * into all three channels.
 */
export function writePpm(path: string, img: GrayImage): void {
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, "ascii");
  const pixels = Buffer.alloc(img.width * img.height * 3);
  for (let i = 0; i < img.data.length; i++) {
    const v = Math.max(0, Math.min(255, Math.round(img.data[i])));
    pixels[3 * i] = v;
    pixels[3 * i + 1] = v;
    pixels[3 * i + 2] = v;
  }
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, Buffer.concat([header, pixels]));
}

/**
 * Bilinear sample at a fractional pixel position; coordinates outside the
 * image clamp to the border.
 */
export function sampleBilinear(img: GrayImage, x: number, y: number): number {
  const cx = Math.max(0, Math.min(img.width - 1, x));
  const cy = Math.max(0, Math.min(img.height - 1, y));
  const x0 = Math.floor(cx);
  const y0 = Math.floor(cy);
  const x1 = Math.min(x0 + 1, img.width - 1);
  const y1 = Math.min(y0 + 1, img.height - 1);
  const fx = cx - x0;
  const fy = cy - y0;
  const top = img.data[y0 * img.width + x0] * (1 - fx) + img.data[y0 * img.width + x1] * fx;
  const bot = img.data[y1 * img.width + x0] * (1 - fx) + img.data[y1 * img.width + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

/**
 * Resize with bilinear interpolation.
 */
export function resize(img: GrayImage, width: number, height: number): GrayImage {
  const out = makeImage(width, height);
  const sx = img.width / width;
  const sy = img.height / height;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      out.data[y * width + x] = sampleBilinear(
        img,
        (x + 0.5) * sx - 0.5,
        (y + 0.5) * sy - 0.5
      );
    }
  }
  return out;
}

/** 2-D similarity transform p' = [[a, -b], [b, a]] p + [tx, ty]. */
export interface Similarity {
  a: number;
  b: number;
  tx: number;
  ty: number;
}

export const IDENTITY: Similarity = { a: 1, b: 0, tx: 0, ty: 0 };

export function applySimilarity(t: Similarity, x: number, y: number): [number, number] {
  return [t.a * x - t.b * y + t.tx, t.b * x + t.a * y + t.ty];
}

export function invertSimilarity(t: Similarity): Similarity {
  const s2 = t.a * t.a + t.b * t.b;
  if (s2 === 0) {
    throw new Error("similarity transform is singular");
  }
  const a = t.a / s2;
  const b = -t.b / s2;
  return { a, b, tx: -(a * t.tx - b * t.ty), ty: -(b * t.tx + a * t.ty) };
}

/**
 * Warp an image with a similarity transform (source -> output coordinates)
 * by inverse mapping every output pixel.
 */
export function warpSimilarity(
  img: GrayImage,
  transform: Similarity,
  width: number,
  height: number
): GrayImage {
  const inv = invertSimilarity(transform);
  const out = makeImage(width, height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [sx, sy] = applySimilarity(inv, x, y);
      out.data[y * width + x] = sampleBilinear(img, sx, sy);
    }
  }
  return out;
}
