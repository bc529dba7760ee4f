/**
 * Label CSV files: one header line naming the 12 AUs, then one row of 12
 * integers per frame, each in {-1, 0, 1} (-1 marks an invalid annotation).
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

export const AU_NAMES = [
  "AU1", "AU2", "AU4", "AU6", "AU7", "AU10",
  "AU12", "AU15", "AU23", "AU24", "AU25", "AU26",
] as const;

export const N_AUS = AU_NAMES.length;

/**
 * Serialize label rows as CSV text.
 */
export function encodeLabelFile(rows: number[][]): string {
  const lines = [AU_NAMES.join(",")];
  for (const [i, row] of rows.entries()) {
    if (row.length !== N_AUS) {
      throw new Error(`label row ${i} has ${row.length} fields, expected ${N_AUS}`);
    }
    for (const v of row) {
      if (v !== -1 && v !== 0 && v !== 1) {
        throw new Error(`label row ${i} holds ${v}, expected -1, 0 or 1`);
      }
    }
    lines.push(row.join(","));
  }
  return lines.join("\n") + "\n";
}

/**
 * Write a label CSV, creating parent directories.
 */
export function writeLabelFile(path: string, rows: number[][]): void {
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, encodeLabelFile(rows));
}

/**
 * Read a label CSV back into integer rows; inverse of writeLabelFile.
 */
export function readLabelFile(path: string): number[][] {
  const lines = readFileSync(path, "utf-8")
    .split("\n")
    .map((ln) => ln.trim())
    .filter((ln) => ln.length > 0);
  if (lines.length === 0) {
    throw new Error(`${path}: empty label file`);
  }
  if (lines[0] !== AU_NAMES.join(",")) {
    throw new Error(`${path}: label header does not match the AU names`);
  }
  return lines.slice(1).map((line, i) => {
    const parts = line.split(",");
    if (parts.length !== N_AUS) {
      throw new Error(`${path}: row ${i} has ${parts.length} fields, expected ${N_AUS}`);
    }
    return parts.map((p) => {
      const v = Number(p);
      if (!Number.isInteger(v) || v < -1 || v > 1) {
        throw new Error(`${path}: row ${i} holds ${p}, expected -1, 0 or 1`);
      }
      return v;
    });
  });
}
