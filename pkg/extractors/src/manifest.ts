/**
 * Dataset manifest JSON. File paths are stored relative to the manifest's
 * own directory so the dataset tree stays relocatable.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

import { AU_NAMES } from "./labels.js";

export const STREAMS = ["swin", "ghfeat", "hubert", "roberta"] as const;
export type StreamName = (typeof STREAMS)[number];

export interface VideoEntry {
  videoId: string;
  frameCount: number;
  fps: number;
  /** Stream name -> manifest-relative feature file path. */
  featurePaths: Record<string, string>;
  labelPath: string;
  split?: string;
}

/**
 * Write a manifest covering the given videos.
 */
export function writeManifest(
  path: string,
  videos: VideoEntry[],
  splitSeed: number = 0
): void {
  const doc = {
    au_names: [...AU_NAMES],
    split_seed: splitSeed,
    videos: videos.map((v) => ({
      video_id: v.videoId,
      frame_count: v.frameCount,
      fps: v.fps,
      feature_paths: v.featurePaths,
      label_path: v.labelPath,
      split: v.split ?? "unassigned",
    })),
  };
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, JSON.stringify(doc, null, 2) + "\n");
}
