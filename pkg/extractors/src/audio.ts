/**
 * Minimal WAV audio support: read and write mono 16-bit PCM RIFF files.
 * Samples are exposed as floats in [-1, 1].
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

export interface AudioClip {
  sampleRate: number;
  samples: Float32Array;
}

/** Duration of the clip in seconds. */
export function clipDuration(clip: AudioClip): number {
  return clip.samples.length / clip.sampleRate;
}

/**
 * Read a mono 16-bit PCM WAV file.
 */
export function readWav(path: string): AudioClip {
  const buf = readFileSync(path);
  if (buf.length < 12 || buf.toString("ascii", 0, 4) !== "RIFF" || buf.toString("ascii", 8, 12) !== "WAVE") {
    throw new Error(`${path}: not a RIFF/WAVE file`);
  }
  let sampleRate = 0;
  let gotFmt = false;
  let pos = 12;
  while (pos + 8 <= buf.length) {
    const chunkId = buf.toString("ascii", pos, pos + 4);
    const chunkSize = buf.readUInt32LE(pos + 4);
    const body = pos + 8;
    if (chunkId === "fmt ") {
      const format = buf.readUInt16LE(body);
      const channels = buf.readUInt16LE(body + 2);
      sampleRate = buf.readUInt32LE(body + 4);
      const bitsPerSample = buf.readUInt16LE(body + 14);
      if (format !== 1 || channels !== 1 || bitsPerSample !== 16) {
        throw new Error(`${path}: only mono 16-bit PCM is supported`);
      }
      gotFmt = true;
    } else if (chunkId === "data") {
      if (!gotFmt) {
        throw new Error(`${path}: data chunk before fmt chunk`);
      }
      if (body + chunkSize > buf.length) {
        throw new Error(`${path}: truncated data chunk`);
      }
      const n = Math.floor(chunkSize / 2);
      const samples = new Float32Array(n);
      for (let i = 0; i < n; i++) {
        samples[i] = buf.readInt16LE(body + 2 * i) / 32768;
      }
      return { sampleRate, samples };
    }
    // chunks are word-aligned
    pos = body + chunkSize + (chunkSize % 2);
  }
  throw new Error(`${path}: no data chunk found`);
}

/**
 * Write a mono 16-bit PCM WAV file; samples are clamped to [-1, 1].
 */
export function writeWav(path: string, clip: AudioClip): void {
  const n = clip.samples.length;
  const dataSize = n * 2;
  const buf = Buffer.alloc(44 + dataSize);
  buf.write("RIFF", 0, "ascii");
  buf.writeUInt32LE(36 + dataSize, 4);
  buf.write("WAVE", 8, "ascii");
  buf.write("fmt ", 12, "ascii");
  buf.writeUInt32LE(16, 16);
  buf.writeUInt16LE(1, 20); // PCM
  buf.writeUInt16LE(1, 22); // mono
  buf.writeUInt32LE(clip.sampleRate, 24);
  buf.writeUInt32LE(clip.sampleRate * 2, 28); // byte rate
  buf.writeUInt16LE(2, 32); // block align
  buf.writeUInt16LE(16, 34);
  buf.write("data", 36, "ascii");
  buf.writeUInt32LE(dataSize, 40);
  for (let i = 0; i < n; i++) {
    const v = Math.max(-1, Math.min(1, clip.samples[i]));
    buf.writeInt16LE(Math.max(-32768, Math.min(32767, Math.round(v * 32768))), 44 + 2 * i);
  }
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, buf);
}

/**
 * Slice the samples overlapping [t0, t1] seconds, clamped to the clip.
 */
export function sliceSeconds(clip: AudioClip, t0: number, t1: number): Float32Array {
  const lo = Math.max(0, Math.floor(t0 * clip.sampleRate));
  const hi = Math.min(clip.samples.length, Math.ceil(t1 * clip.sampleRate));
  return clip.samples.slice(lo, Math.max(lo, hi));
}
