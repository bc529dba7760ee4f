/**
 * Word-level transcript handling: parse word timestamps and select the
 * words active at a frame's timestamp. The downstream trainer re-windows
 * per-frame rows over +/-2 s itself, so the extractor only needs to map
 * each frame to the words spoken at that instant.
 */

import { readFileSync } from "node:fs";

export interface WordTimestamp {
  word: string;
  /** Word start time in seconds. */
  start: number;
  /** Word end time in seconds. */
  end: number;
}

/** Tolerance for boundary comparisons so exact window edges count as inside. */
export const TIME_EPS = 1e-9;

/**
 * Parse a transcript JSON file of the form {"words": [{word, start, end}]}.
 * An empty or missing word list means a silent video.
 */
export function readTranscript(path: string): WordTimestamp[] {
  const doc = JSON.parse(readFileSync(path, "utf8")) as { words?: unknown };
  if (!Array.isArray(doc.words)) {
    throw new Error(`${path}: transcript must contain a "words" array`);
  }
  return doc.words.map((raw, i) => {
    const w = raw as Partial<WordTimestamp>;
    if (
      typeof w.word !== "string" ||
      typeof w.start !== "number" ||
      typeof w.end !== "number" ||
      !(w.start <= w.end)
    ) {
      throw new Error(`${path}: words[${i}] is not a valid word timestamp`);
    }
    return { word: w.word, start: w.start, end: w.end };
  });
}

/** Timestamp in seconds of a frame index at the given frame rate. */
export function frameTime(frameIdx: number, fps: number): number {
  if (!(fps > 0)) {
    throw new Error("fps must be positive");
  }
  return frameIdx / fps;
}

/**
 * Words whose [start, end] span overlaps the closed window [t0, t1],
 * with boundary tolerance so a word ending exactly at t0 still counts.
 */
export function wordsInWindow(words: readonly WordTimestamp[], t0: number, t1: number): WordTimestamp[] {
  return words.filter((w) => w.end >= t0 - TIME_EPS && w.start <= t1 + TIME_EPS);
}

/** Words being spoken at instant t (closed interval, boundary tolerant). */
export function wordsAtTime(words: readonly WordTimestamp[], t: number): WordTimestamp[] {
  return wordsInWindow(words, t, t);
}
