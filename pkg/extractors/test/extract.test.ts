import { execFileSync } from "node:child_process";
import { existsSync, mkdirSync, mkdtempSync, readFileSync, readdirSync, rmSync, statSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, relative } from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import { ExtractionJob, parseJob, runJob } from "../src/extract.js";
import { DEFAULT_STUB_DIMS } from "../src/backends.js";
import { readFeatureFile } from "../src/featureFile.js";
import { N_AUS, readLabelFile, writeLabelFile } from "../src/labels.js";
import { makeImage, writePpm } from "../src/images.js";
import { makeFace } from "./helpers.js";

const FPS = 5;
const V0_FRAMES = 8;
const V1_FRAMES = 10;
const V1_FLAT_FRAME = 4;

const tmp = mkdtempSync(join(tmpdir(), "extract-"));
afterAll(() => rmSync(tmp, { recursive: true, force: true }));

function annotationRows(count: number): number[][] {
  return Array.from({ length: count }, (_, i) =>
    Array.from({ length: N_AUS }, (_, j) => ((i + j) % 3) - 1)
  );
}

function writeFrames(dir: string, count: number, flatFrame = -1): void {
  mkdirSync(dir, { recursive: true });
  for (let i = 0; i < count; i++) {
    const jitter = (i % 3) - 1;
    let img;
    if (i === flatFrame) {
      img = makeImage(24, 24);
      img.data.fill(20);
    } else {
      img = makeFace(24, 24, [8 + jitter, 8], [16 + jitter, 8], [12, 18]);
    }
    writePpm(join(dir, `f${String(i).padStart(3, "0")}.ppm`), img);
  }
}

function buildFixture(): string {
  writeFrames(join(tmp, "frames", "v0"), V0_FRAMES);
  writeFrames(join(tmp, "frames", "v1"), V1_FRAMES, V1_FLAT_FRAME);

  const sampleRate = 8000;
  const samples = Float32Array.from({ length: sampleRate * 2 }, (_, i) =>
    0.5 * Math.sin((2 * Math.PI * 220 * i) / sampleRate)
  );
  const wav = Buffer.alloc(44 + samples.length * 2);
  wav.write("RIFF", 0, "ascii");
  wav.writeUInt32LE(36 + samples.length * 2, 4);
  wav.write("WAVE", 8, "ascii");
  wav.write("fmt ", 12, "ascii");
  wav.writeUInt32LE(16, 16);
  wav.writeUInt16LE(1, 20);
  wav.writeUInt16LE(1, 22);
  wav.writeUInt32LE(sampleRate, 24);
  wav.writeUInt32LE(sampleRate * 2, 28);
  wav.writeUInt16LE(2, 32);
  wav.writeUInt16LE(16, 34);
  wav.write("data", 36, "ascii");
  wav.writeUInt32LE(samples.length * 2, 40);
  for (let i = 0; i < samples.length; i++) {
    wav.writeInt16LE(Math.round(samples[i] * 32767), 44 + 2 * i);
  }
  mkdirSync(join(tmp, "audio"), { recursive: true });
  writeFileSync(join(tmp, "audio", "v0.wav"), wav);

  mkdirSync(join(tmp, "tx"), { recursive: true });
  writeFileSync(
    join(tmp, "tx", "v0.json"),
    JSON.stringify({
      words: [
        { word: "hello", start: 0.0, end: 0.9 },
        { word: "world", start: 1.0, end: 1.1 },
      ],
    })
  );

  writeLabelFile(join(tmp, "ann", "v0.csv"), annotationRows(V0_FRAMES));

  const jobDoc = (outDir: string) => ({
    backend: "stub",
    out_dir: outDir,
    fps: FPS,
    align_size: 32,
    streams: ["swin", "ghfeat", "hubert", "roberta"],
    split_seed: 7,
    videos: [
      {
        video_id: "v0",
        frames_dir: "frames/v0",
        audio: "audio/v0.wav",
        transcript: "tx/v0.json",
        annotations: "ann/v0.csv",
        split: "train",
      },
      { video_id: "v1", frames_dir: "frames/v1" },
    ],
  });
  writeFileSync(join(tmp, "job.json"), JSON.stringify(jobDoc("out"), null, 2));
  writeFileSync(join(tmp, "job2.json"), JSON.stringify(jobDoc("out2"), null, 2));
  writeFileSync(join(tmp, "job3.json"), JSON.stringify(jobDoc("out3"), null, 2));
  return join(tmp, "job.json");
}

const jobPath = buildFixture();
const job = parseJob(jobPath);
const report = runJob(job);
const out = join(tmp, "out");

function listFilesRecursive(dir: string): string[] {
  const found: string[] = [];
  for (const name of readdirSync(dir)) {
    const p = join(dir, name);
    if (statSync(p).isDirectory()) found.push(...listFilesRecursive(p));
    else found.push(p);
  }
  return found;
}

describe("parseJob", () => {
  it("resolves paths relative to the job file", () => {
    expect(job.outDir).toBe(out);
    expect(job.videos[0].framesDir).toBe(join(tmp, "frames", "v0"));
    expect(job.videos[0].audio).toBe(join(tmp, "audio", "v0.wav"));
    expect(job.fps).toBe(FPS);
    expect(job.splitSeed).toBe(7);
  });

  it("rejects a job without out_dir", () => {
    const bad = join(tmp, "bad1.json");
    writeFileSync(bad, JSON.stringify({ videos: [{ video_id: "x", frames_dir: "f" }] }));
    expect(() => parseJob(bad)).toThrow(/out_dir/);
  });

  it("rejects unknown streams", () => {
    const bad = join(tmp, "bad2.json");
    writeFileSync(
      bad,
      JSON.stringify({ out_dir: "o", streams: ["swin", "clip"], videos: [{ video_id: "x", frames_dir: "f" }] })
    );
    expect(() => parseJob(bad)).toThrow(/clip/);
  });
});

describe("runJob", () => {
  it("reports frame counts, fallback frames, and warnings per video", () => {
    expect(report.videos.map((v) => v.videoId)).toEqual(["v0", "v1"]);
    const [v0, v1] = report.videos;
    expect(v0.frameCount).toBe(V0_FRAMES);
    expect(v0.fallbackFrames).toEqual([]);
    expect(v0.warnings).toEqual([]);
    expect(v1.frameCount).toBe(V1_FRAMES);
    expect(v1.fallbackFrames).toEqual([V1_FLAT_FRAME]);
    expect(v1.warnings.join(" ")).toMatch(/audio missing/);
    expect(v1.warnings.join(" ")).toMatch(/transcript missing/);
    expect(v1.warnings.join(" ")).toMatch(/annotations missing/);
  });

  it("keeps per-stream dims consistent across videos", () => {
    for (const stream of ["swin", "ghfeat", "hubert", "roberta"] as const) {
      const a = readFeatureFile(join(out, "features", "v0", `${stream}.feat`));
      const b = readFeatureFile(join(out, "features", "v1", `${stream}.feat`));
      expect(a.streamName).toBe(stream);
      expect(b.streamName).toBe(stream);
      expect(a.dim).toBe(DEFAULT_STUB_DIMS[stream]);
      expect(b.dim).toBe(a.dim);
      expect(a.frameCount).toBe(V0_FRAMES);
      expect(b.frameCount).toBe(V1_FRAMES);
    }
  });

  it("writes all-zero speech and text streams when audio and transcript are absent", () => {
    for (const stream of ["hubert", "roberta"] as const) {
      const file = readFeatureFile(join(out, "features", "v1", `${stream}.feat`));
      expect(file.values.every((v) => v === 0)).toBe(true);
    }
  });

  it("zeroes exactly the text rows with no active word", () => {
    const file = readFeatureFile(join(out, "features", "v0", "roberta.feat"));
    const rowIsZero = (i: number): boolean =>
      file.values.slice(i * file.dim, (i + 1) * file.dim).every((v) => v === 0);
    // words cover t in [0, 0.9] and [1.0, 1.1]; frames 6 and 7 sit at t = 1.2, 1.4
    for (let i = 0; i < 6; i++) expect(rowIsZero(i)).toBe(false);
    expect(rowIsZero(6)).toBe(true);
    expect(rowIsZero(7)).toBe(true);
  });

  it("copies annotations through and marks unannotated videos unlabeled", () => {
    expect(readLabelFile(join(out, "labels", "v0.csv"))).toEqual(annotationRows(V0_FRAMES));
    const v1 = readLabelFile(join(out, "labels", "v1.csv"));
    expect(v1.length).toBe(V1_FRAMES);
    for (const row of v1) expect(row.every((v) => v === -1)).toBe(true);
  });

  it("fails with a model load failure for a backend that is not installed", () => {
    const bad: ExtractionJob = { ...job, backend: "real-esrgan", outDir: join(tmp, "never") };
    expect(() => runJob(bad)).toThrow(/model load failure/);
  });

  it("is deterministic: an identical job produces byte-identical outputs", () => {
    runJob(parseJob(join(tmp, "job2.json")));
    const out2 = join(tmp, "out2");
    const first = listFilesRecursive(out).map((p) => relative(out, p)).sort();
    const second = listFilesRecursive(out2).map((p) => relative(out2, p)).sort();
    expect(second).toEqual(first);
    for (const rel of first) {
      const a = readFileSync(join(out, rel));
      const b = readFileSync(join(out2, rel));
      expect(b.equals(a), `${rel} differs between runs`).toBe(true);
    }
  });
});

describe("conformance with the training package", () => {
  it("the emitted manifest passes the python validator", () => {
    const manifestPath = join(out, "manifest.json");
    expect(existsSync(manifestPath)).toBe(true);
    const stdout = execFileSync(
      "python3",
      ["-m", "fuseau.cli", "validate", "--manifest", manifestPath],
      { encoding: "utf8" }
    );
    expect(stdout).toContain("manifest OK: 2 videos");
  });

  it("feature values read back identically through the python loader", () => {
    const path = join(out, "features", "v0", "swin.feat");
    const ours = readFeatureFile(path);
    const script = [
      "import json, sys",
      "from fuseau.feature_store import read_feature_file",
      "name, data = read_feature_file(sys.argv[1])",
      'print(json.dumps([float(x) for x in data.ravel()]))',
    ].join("\n");
    const theirs = JSON.parse(
      execFileSync("python3", ["-c", script, path], { encoding: "utf8" })
    ) as number[];
    expect(theirs.length).toBe(ours.values.length);
    for (let i = 0; i < theirs.length; i++) {
      expect(theirs[i]).toBe(ours.values[i]);
    }
  });
});

describe("command line", () => {
  const cliPath = join(__dirname, "..", "dist", "cli.js");

  it("runs a job end to end and reports what it wrote", () => {
    const stdout = execFileSync("node", [cliPath, "extract", "--job", join(tmp, "job3.json")], {
      encoding: "utf8",
    });
    expect(stdout).toContain(`v0: ${V0_FRAMES} frames`);
    expect(stdout).toContain("1 fallback frames");
    expect(stdout).toContain("manifest.json");
    expect(existsSync(join(tmp, "out3", "manifest.json"))).toBe(true);
  });

  it("exits nonzero without a job file", () => {
    let failed = false;
    try {
      execFileSync("node", [cliPath, "extract"], { encoding: "utf8", stdio: "pipe" });
    } catch {
      failed = true;
    }
    expect(failed).toBe(true);
  });
});
