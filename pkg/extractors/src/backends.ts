/**
 * Pluggable model backends for the four feature streams plus the face
 * preprocessing stages. Real pretrained weights are not bundled; requesting
 * them raises a model load failure. The "stub" backend is a fully
 * deterministic stand-in (content-hash seeded PRNG features, bilinear
 * upscaling, brightness-blob landmark detection) so the extraction pipeline
 * and its file contracts can run and be tested end to end.
 */

import { GrayImage, resize } from "./images.js";
import { Landmarks68, LandmarkDetector, Point, Upscaler } from "./align.js";

export interface ImageEmbedder {
  dim: number;
  embed(img: GrayImage): Float32Array;
}

export interface AudioEmbedder {
  dim: number;
  embed(samples: Float32Array, sampleRate: number): Float32Array;
}

export interface TextEmbedder {
  dim: number;
  embed(word: string): Float32Array;
}

/** Everything a run needs: preprocessing stages and one embedder per stream. */
export interface BackendSuite {
  name: string;
  upscaler: Upscaler;
  detector: LandmarkDetector;
  /** Visual transformer features of the raw frame. */
  swin: ImageEmbedder;
  /** Generative-encoder features of the aligned face. */
  ghfeat: ImageEmbedder;
  /** Speech features of the audio around the frame. */
  hubert: AudioEmbedder;
  /** Word embedding features. */
  roberta: TextEmbedder;
}

/** Per-stream output dims of the stub backend (the header carries the dim). */
export interface StubDims {
  swin: number;
  ghfeat: number;
  hubert: number;
  roberta: number;
}

export const DEFAULT_STUB_DIMS: StubDims = { swin: 12, ghfeat: 8, hubert: 6, roberta: 10 };

/** 32-bit FNV-1a hash. */
export function fnv1a32(bytes: Uint8Array): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < bytes.length; i++) {
    h = (h ^ bytes[i]) >>> 0;
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

function xorshift32(state: number): number {
  let x = state >>> 0;
  x = (x ^ (x << 13)) >>> 0;
  x = (x ^ (x >>> 17)) >>> 0;
  x = (x ^ (x << 5)) >>> 0;
  return x >>> 0;
}

/**
 * dim uniform values in [-1, 1] seeded by a byte payload. Integer-only
 * state updates keep the output identical across platforms.
 */
export function hashFeatures(tag: string, payload: Uint8Array, dim: number): Float32Array {
  const tagBytes = Buffer.from(tag, "utf8");
  const seeded = new Uint8Array(tagBytes.length + payload.length);
  seeded.set(tagBytes, 0);
  seeded.set(payload, tagBytes.length);
  let state = fnv1a32(seeded);
  if (state === 0) state = 0x9e3779b9;
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i++) {
    state = xorshift32(state);
    out[i] = (state / 0xffffffff) * 2 - 1;
  }
  return out;
}

function quantizeImage(img: GrayImage): Uint8Array {
  const bytes = new Uint8Array(8 + img.data.length);
  const view = new DataView(bytes.buffer);
  view.setUint32(0, img.width, true);
  view.setUint32(4, img.height, true);
  for (let i = 0; i < img.data.length; i++) {
    bytes[8 + i] = Math.max(0, Math.min(255, Math.round(img.data[i])));
  }
  return bytes;
}

function quantizeAudio(samples: Float32Array, sampleRate: number): Uint8Array {
  const bytes = new Uint8Array(4 + samples.length * 2);
  const view = new DataView(bytes.buffer);
  view.setUint32(0, sampleRate, true);
  for (let i = 0; i < samples.length; i++) {
    const v = Math.max(-1, Math.min(1, samples[i]));
    view.setInt16(4 + 2 * i, Math.round(v * 32767), true);
  }
  return bytes;
}

class StubImageEmbedder implements ImageEmbedder {
  constructor(readonly tag: string, readonly dim: number) {}

  embed(img: GrayImage): Float32Array {
    return hashFeatures(this.tag, quantizeImage(img), this.dim);
  }
}

class StubAudioEmbedder implements AudioEmbedder {
  constructor(readonly tag: string, readonly dim: number) {}

  embed(samples: Float32Array, sampleRate: number): Float32Array {
    return hashFeatures(this.tag, quantizeAudio(samples, sampleRate), this.dim);
  }
}

class StubTextEmbedder implements TextEmbedder {
  constructor(readonly tag: string, readonly dim: number) {}

  embed(word: string): Float32Array {
    return hashFeatures(this.tag, Buffer.from(word, "utf8"), this.dim);
  }
}

/** Super-resolution stand-in: plain bilinear upscale by an integer factor. */
export class StubUpscaler implements Upscaler {
  constructor(readonly scale: number = 4) {
    if (!Number.isInteger(scale) || scale < 1) {
      throw new Error("upscale factor must be a positive integer");
    }
  }

  upscale(img: GrayImage): GrayImage {
    return resize(img, img.width * this.scale, img.height * this.scale);
  }
}

function brightCentroid(
  img: GrayImage,
  x0: number,
  x1: number,
  y0: number,
  y1: number,
  threshold: number
): Point | null {
  let mass = 0;
  let sx = 0;
  let sy = 0;
  for (let y = y0; y < y1; y++) {
    for (let x = x0; x < x1; x++) {
      const w = img.data[y * img.width + x] - threshold;
      if (w > 0) {
        mass += w;
        sx += w * x;
        sy += w * y;
      }
    }
  }
  if (mass === 0) return null;
  return [sx / mass, sy / mass];
}

/**
 * Landmark detection stand-in that localizes the two brightest blobs in the
 * upper face region (eyes) and one in the lower region (mouth), then emits a
 * 68-point set whose anchor groups sit exactly on those centroids. Returns
 * null on frames with no contrast or a missing blob, which exercises the
 * fallback path exactly like a real detector failure.
 */
export class StubLandmarkDetector implements LandmarkDetector {
  detect(img: GrayImage): Landmarks68 | null {
    let lo = Infinity;
    let hi = -Infinity;
    for (let i = 0; i < img.data.length; i++) {
      const v = img.data[i];
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    if (!(hi - lo > 1)) return null;
    const threshold = (lo + hi) / 2;
    const splitY = Math.round(img.height * 0.55);
    const splitX = Math.round(img.width / 2);
    const leftEye = brightCentroid(img, 0, splitX, 0, splitY, threshold);
    const rightEye = brightCentroid(img, splitX, img.width, 0, splitY, threshold);
    const mouth = brightCentroid(img, 0, img.width, splitY, img.height, threshold);
    if (!leftEye || !rightEye || !mouth) return null;
    const center: Point = [
      (leftEye[0] + rightEye[0] + mouth[0]) / 3,
      (leftEye[1] + rightEye[1] + mouth[1]) / 3,
    ];
    const points: Point[] = new Array(68).fill(center);
    for (let i = 36; i < 42; i++) points[i] = leftEye;
    for (let i = 42; i < 48; i++) points[i] = rightEye;
    points[48] = mouth;
    points[54] = mouth;
    return points;
  }
}

/**
 * Load a backend suite by name. Only the deterministic "stub" backend ships
 * with this package; any other name reports a model load failure.
 */
export function loadBackend(name: string, dims: Partial<StubDims> = {}): BackendSuite {
  if (name !== "stub") {
    throw new Error(`model load failure: backend "${name}" is not installed (only "stub" ships with this package)`);
  }
  const d: StubDims = { ...DEFAULT_STUB_DIMS, ...dims };
  return {
    name,
    upscaler: new StubUpscaler(),
    detector: new StubLandmarkDetector(),
    swin: new StubImageEmbedder("swin", d.swin),
    ghfeat: new StubImageEmbedder("ghfeat", d.ghfeat),
    hubert: new StubAudioEmbedder("hubert", d.hubert),
    roberta: new StubTextEmbedder("roberta", d.roberta),
  };
}
