import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import { clipDuration, readWav, sliceSeconds, writeWav } from "../src/audio.js";

const tmp = mkdtempSync(join(tmpdir(), "audio-"));
afterAll(() => rmSync(tmp, { recursive: true, force: true }));

describe("wav round trip", () => {
  it("recovers samples to 16-bit quantization", () => {
    const samples = Float32Array.from({ length: 64 }, (_, i) => Math.sin((i / 64) * 2 * Math.PI));
    const path = join(tmp, "tone.wav");
    writeWav(path, { sampleRate: 8000, samples });
    const back = readWav(path);
    expect(back.sampleRate).toBe(8000);
    expect(back.samples.length).toBe(64);
    for (let i = 0; i < 64; i++) {
      expect(Math.abs(back.samples[i] - samples[i])).toBeLessThan(1.01 / 32768);
    }
  });

  it("measures duration from sample count and rate", () => {
    expect(clipDuration({ sampleRate: 100, samples: new Float32Array(250) })).toBeCloseTo(2.5, 10);
  });

  it("rejects files without the RIFF/WAVE signature", () => {
    const path = join(tmp, "noise.bin");
    writeFileSync(path, Buffer.from("definitely not audio"));
    expect(() => readWav(path)).toThrow(/RIFF/);
  });
});

describe("sliceSeconds", () => {
  const clip = { sampleRate: 10, samples: Float32Array.from({ length: 30 }, (_, i) => i) };

  it("returns the samples covering the interval", () => {
    const slice = sliceSeconds(clip, 1.0, 1.5);
    expect(Array.from(slice)).toEqual([10, 11, 12, 13, 14]);
  });

  it("clamps to the clip bounds", () => {
    expect(sliceSeconds(clip, -5, 0.2).length).toBe(2);
    expect(sliceSeconds(clip, 2.5, 99).length).toBe(5);
    expect(sliceSeconds(clip, 50, 60).length).toBe(0);
  });
});
