/**
 * Binary feature file container (all integers little-endian):
 *
 *   8 bytes   magic "FUSEAU01" (trailing 01 = container version, float32)
 *   u16       stream-name byte length
 *   ...       stream name, UTF-8
 *   u64       frame count
 *   u64       dim
 *   f32 * (frames * dim)   frame-major matrix
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

export const FEATURE_MAGIC = "FUSEAU01";

export interface FeatureMatrix {
  streamName: string;
  frameCount: number;
  dim: number;
  /** Frame-major values, length frameCount * dim. */
  values: Float32Array;
}

/**
 * Serialize a feature matrix into the container bytes.
 */
export function encodeFeatureFile(matrix: FeatureMatrix): Buffer {
  const { streamName, frameCount, dim, values } = matrix;
  if (values.length !== frameCount * dim) {
    throw new Error(
      `value count ${values.length} does not match ${frameCount} x ${dim}`
    );
  }
  const nameBytes = Buffer.from(streamName, "utf-8");
  const header = Buffer.alloc(8 + 2 + nameBytes.length + 16);
  header.write(FEATURE_MAGIC, 0, "ascii");
  header.writeUInt16LE(nameBytes.length, 8);
  nameBytes.copy(header, 10);
  header.writeBigUInt64LE(BigInt(frameCount), 10 + nameBytes.length);
  header.writeBigUInt64LE(BigInt(dim), 18 + nameBytes.length);

  const payload = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    payload.writeFloatLE(values[i], i * 4);
  }
  return Buffer.concat([header, payload]);
}

/**
 * Write a feature matrix to disk, creating parent directories.
 */
export function writeFeatureFile(path: string, matrix: FeatureMatrix): void {
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, encodeFeatureFile(matrix));
}

/**
 * Read a feature file back; inverse of writeFeatureFile.
 */
export function readFeatureFile(path: string): FeatureMatrix {
  const buf = readFileSync(path);
  if (buf.length < 10 || buf.toString("ascii", 0, 8) !== FEATURE_MAGIC) {
    throw new Error(`${path}: bad magic, expected ${FEATURE_MAGIC}`);
  }
  const nameLen = buf.readUInt16LE(8);
  const headerSize = 10 + nameLen + 16;
  if (buf.length < headerSize) {
    throw new Error(`${path}: truncated header`);
  }
  const streamName = buf.toString("utf-8", 10, 10 + nameLen);
  const frameCount = Number(buf.readBigUInt64LE(10 + nameLen));
  const dim = Number(buf.readBigUInt64LE(18 + nameLen));
  const expected = frameCount * dim * 4;
  if (buf.length - headerSize !== expected) {
    throw new Error(
      `${path}: payload is ${buf.length - headerSize} bytes, header implies ${expected}`
    );
  }
  const values = new Float32Array(frameCount * dim);
  for (let i = 0; i < values.length; i++) {
    values[i] = buf.readFloatLE(headerSize + i * 4);
  }
  return { streamName, frameCount, dim, values };
}
