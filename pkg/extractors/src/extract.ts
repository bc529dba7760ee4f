/**
 * Extraction jobs: walk per-video frame directories, run the backend suite
 * over frames / audio / transcript, and emit the canonical feature files,
 * label CSVs, and dataset manifest the training package consumes.
 *
 * Audio and word rows are stored at the video frame rate (one row per
 * frame, covering just that frame's time slice) so the consumer applies its
 * own temporal windowing; frames with no active word get zero rows.
 */

import { existsSync, readdirSync, readFileSync } from "node:fs";
import { dirname, join, resolve } from "node:path";

import { BackendSuite, StubDims, loadBackend } from "./backends.js";
import { preprocessFace } from "./align.js";
import { AudioClip, readWav, sliceSeconds } from "./audio.js";
import { writeFeatureFile } from "./featureFile.js";
import { GrayImage, readPpm } from "./images.js";
import { N_AUS, readLabelFile, writeLabelFile } from "./labels.js";
import { STREAMS, StreamName, VideoEntry, writeManifest } from "./manifest.js";
import { WordTimestamp, frameTime, readTranscript, wordsAtTime } from "./windows.js";

export interface VideoJob {
  videoId: string;
  /** Directory of per-frame PPM images, ordered by filename. */
  framesDir: string;
  /** Mono 16-bit PCM WAV; absent means a silent video. */
  audio?: string;
  /** Word-timestamp JSON; absent means no transcript is available. */
  transcript?: string;
  /** Canonical per-frame label CSV to copy through; absent means unlabeled. */
  annotations?: string;
  split?: string;
}

export interface ExtractionJob {
  backend: string;
  outDir: string;
  fps: number;
  /** Side length of the aligned face crop. */
  alignSize: number;
  streams: StreamName[];
  stubDims?: Partial<StubDims>;
  splitSeed: number;
  videos: VideoJob[];
}

export interface VideoReport {
  videoId: string;
  frameCount: number;
  /** Frame indices where landmark detection failed and alignment fell back. */
  fallbackFrames: number[];
  warnings: string[];
}

export interface JobReport {
  manifestPath: string;
  videos: VideoReport[];
}

/**
 * Parse a job spec JSON file; relative paths resolve against the file's
 * directory.
 */
export function parseJob(path: string): ExtractionJob {
  const doc = JSON.parse(readFileSync(path, "utf8")) as Record<string, unknown>;
  const base = dirname(resolve(path));
  const rel = (p: string): string => resolve(base, p);
  if (typeof doc.out_dir !== "string") {
    throw new Error(`${path}: job must set "out_dir"`);
  }
  if (!Array.isArray(doc.videos) || doc.videos.length === 0) {
    throw new Error(`${path}: job must list at least one video`);
  }
  const streams = (doc.streams as StreamName[] | undefined) ?? [...STREAMS];
  for (const s of streams) {
    if (!STREAMS.includes(s)) {
      throw new Error(`${path}: unknown stream ${JSON.stringify(s)}`);
    }
  }
  const videos = (doc.videos as Record<string, unknown>[]).map((v, i) => {
    if (typeof v.video_id !== "string" || typeof v.frames_dir !== "string") {
      throw new Error(`${path}: videos[${i}] must set "video_id" and "frames_dir"`);
    }
    const job: VideoJob = {
      videoId: v.video_id,
      framesDir: rel(v.frames_dir),
    };
    if (typeof v.audio === "string") job.audio = rel(v.audio);
    if (typeof v.transcript === "string") job.transcript = rel(v.transcript);
    if (typeof v.annotations === "string") job.annotations = rel(v.annotations);
    if (typeof v.split === "string") job.split = v.split;
    return job;
  });
  return {
    backend: typeof doc.backend === "string" ? doc.backend : "stub",
    outDir: rel(doc.out_dir),
    fps: typeof doc.fps === "number" ? doc.fps : 25,
    alignSize: typeof doc.align_size === "number" ? doc.align_size : 64,
    streams,
    stubDims: doc.stub_dims as Partial<StubDims> | undefined,
    splitSeed: typeof doc.split_seed === "number" ? doc.split_seed : 0,
    videos,
  };
}

function listFrames(framesDir: string): string[] {
  if (!existsSync(framesDir)) {
    throw new Error(`frames directory not found: ${framesDir}`);
  }
  const frames = readdirSync(framesDir)
    .filter((f) => f.endsWith(".ppm"))
    .sort()
    .map((f) => join(framesDir, f));
  if (frames.length === 0) {
    throw new Error(`no .ppm frames in ${framesDir}`);
  }
  return frames;
}

function meanVector(rows: Float32Array[], dim: number): Float32Array {
  const out = new Float32Array(dim);
  if (rows.length === 0) return out;
  for (const row of rows) {
    for (let i = 0; i < dim; i++) out[i] += row[i];
  }
  for (let i = 0; i < dim; i++) out[i] /= rows.length;
  return out;
}

function packRows(rows: Float32Array[], dim: number): Float32Array {
  const out = new Float32Array(rows.length * dim);
  rows.forEach((row, i) => out.set(row, i * dim));
  return out;
}

/**
 * Extract every requested stream for one video and write its feature files
 * and label CSV under the job's output directory.
 */
export function extractVideo(
  job: ExtractionJob,
  video: VideoJob,
  suite: BackendSuite
): { entry: VideoEntry; report: VideoReport } {
  const framePaths = listFrames(video.framesDir);
  const frameCount = framePaths.length;
  const report: VideoReport = {
    videoId: video.videoId,
    frameCount,
    fallbackFrames: [],
    warnings: [],
  };

  const wantAligned = job.streams.includes("ghfeat");
  const frames: GrayImage[] = framePaths.map((p) => readPpm(p));
  const aligned: GrayImage[] = [];
  if (wantAligned) {
    frames.forEach((frame, i) => {
      const res = preprocessFace(frame, suite.upscaler, suite.detector, job.alignSize);
      if (res.usedFallback) report.fallbackFrames.push(i);
      aligned.push(res.image);
    });
  }

  let clip: AudioClip | null = null;
  if (job.streams.includes("hubert")) {
    if (video.audio && existsSync(video.audio)) {
      clip = readWav(video.audio);
    } else {
      report.warnings.push("audio missing; speech stream written as zeros");
    }
  }

  let words: WordTimestamp[] = [];
  let haveTranscript = false;
  if (job.streams.includes("roberta")) {
    if (video.transcript && existsSync(video.transcript)) {
      words = readTranscript(video.transcript);
      haveTranscript = true;
    } else {
      report.warnings.push("transcript missing; text stream written as zeros");
    }
  }

  const featurePaths: Partial<Record<StreamName, string>> = {};
  for (const stream of job.streams) {
    const rows: Float32Array[] = [];
    let dim: number;
    if (stream === "swin") {
      dim = suite.swin.dim;
      for (const frame of frames) rows.push(suite.swin.embed(frame));
    } else if (stream === "ghfeat") {
      dim = suite.ghfeat.dim;
      for (const face of aligned) rows.push(suite.ghfeat.embed(face));
    } else if (stream === "hubert") {
      dim = suite.hubert.dim;
      for (let i = 0; i < frameCount; i++) {
        if (clip === null) {
          rows.push(new Float32Array(dim));
          continue;
        }
        const t = frameTime(i, job.fps);
        const slice = sliceSeconds(clip, t, t + 1 / job.fps);
        rows.push(slice.length > 0 ? suite.hubert.embed(slice, clip.sampleRate) : new Float32Array(dim));
      }
    } else {
      dim = suite.roberta.dim;
      for (let i = 0; i < frameCount; i++) {
        if (!haveTranscript) {
          rows.push(new Float32Array(dim));
          continue;
        }
        const active = wordsAtTime(words, frameTime(i, job.fps));
        rows.push(meanVector(active.map((w) => suite.roberta.embed(w.word)), dim));
      }
    }
    const relPath = join("features", video.videoId, `${stream}.feat`);
    writeFeatureFile(join(job.outDir, relPath), {
      streamName: stream,
      frameCount,
      dim,
      values: packRows(rows, dim),
    });
    featurePaths[stream] = relPath;
  }

  let labels: number[][];
  if (video.annotations && existsSync(video.annotations)) {
    labels = readLabelFile(video.annotations);
    if (labels.length !== frameCount) {
      throw new Error(
        `${video.videoId}: annotations have ${labels.length} rows but ${frameCount} frames were found`
      );
    }
  } else {
    report.warnings.push("annotations missing; all frames marked unlabeled");
    labels = Array.from({ length: frameCount }, () => new Array<number>(N_AUS).fill(-1));
  }
  const labelRel = join("labels", `${video.videoId}.csv`);
  writeLabelFile(join(job.outDir, labelRel), labels);

  return {
    entry: {
      videoId: video.videoId,
      frameCount,
      fps: job.fps,
      featurePaths: featurePaths as Record<StreamName, string>,
      labelPath: labelRel,
      split: video.split,
    },
    report,
  };
}

/**
 * Run a full extraction job: load the backend, process each video, and
 * write the dataset manifest. Videos are independent of each other.
 */
export function runJob(job: ExtractionJob): JobReport {
  const suite = loadBackend(job.backend, job.stubDims);
  const entries: VideoEntry[] = [];
  const reports: VideoReport[] = [];
  for (const video of job.videos) {
    const { entry, report } = extractVideo(job, video, suite);
    entries.push(entry);
    reports.push(report);
  }
  const manifestPath = join(job.outDir, "manifest.json");
  writeManifest(manifestPath, entries, job.splitSeed);
  return { manifestPath, videos: reports };
}
