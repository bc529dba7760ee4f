/**
 * Face alignment: estimate a 2-D similarity transform from three facial
 * anchor points (eye centers and mouth center, derived from 68-point
 * landmarks) to a canonical template, then warp the frame into a square
 * aligned crop. When landmark detection fails the frame falls back to a
 * plain resize of the super-resolved image and is flagged.
 */

import {
  GrayImage,
  Similarity,
  resize,
  warpSimilarity,
} from "./images.js";

export type Point = readonly [number, number];

/** 68-point face landmark set in image pixel coordinates. */
export type Landmarks68 = readonly Point[];

/** Pluggable landmark detector; returns null when no face is found. */
export interface LandmarkDetector {
  detect(img: GrayImage): Landmarks68 | null;
}

/** Pluggable super-resolution backend. */
export interface Upscaler {
  /** Integer upscale factor applied by upscale(). */
  scale: number;
  upscale(img: GrayImage): GrayImage;
}

// 68-point landmark index groups (iBUG-300W convention).
const LEFT_EYE_RANGE: [number, number] = [36, 42];
const RIGHT_EYE_RANGE: [number, number] = [42, 48];
const MOUTH_CORNERS: [number, number] = [48, 54];

function meanOfRange(landmarks: Landmarks68, lo: number, hi: number): Point {
  let sx = 0;
  let sy = 0;
  for (let i = lo; i < hi; i++) {
    sx += landmarks[i][0];
    sy += landmarks[i][1];
  }
  return [sx / (hi - lo), sy / (hi - lo)];
}

/**
 * Reduce a 68-point landmark set to the three alignment anchors:
 * left eye center, right eye center, mouth center.
 */
export function anchorPoints(landmarks: Landmarks68): [Point, Point, Point] {
  if (landmarks.length !== 68) {
    throw new Error(`expected 68 landmarks, got ${landmarks.length}`);
  }
  const leftEye = meanOfRange(landmarks, ...LEFT_EYE_RANGE);
  const rightEye = meanOfRange(landmarks, ...RIGHT_EYE_RANGE);
  const [a, b] = MOUTH_CORNERS;
  const mouth: Point = [
    (landmarks[a][0] + landmarks[b][0]) / 2,
    (landmarks[a][1] + landmarks[b][1]) / 2,
  ];
  return [leftEye, rightEye, mouth];
}

/**
 * Canonical anchor positions inside a size x size aligned crop: eyes on a
 * horizontal line at 40% height, mouth centered at 78% height.
 */
export function templateAnchors(size: number): [Point, Point, Point] {
  return [
    [0.35 * size, 0.4 * size],
    [0.65 * size, 0.4 * size],
    [0.5 * size, 0.78 * size],
  ];
}

/**
 * Closed-form least-squares similarity transform (rotation + uniform scale +
 * translation) mapping src points onto dst points.
 */
export function estimateSimilarity(src: readonly Point[], dst: readonly Point[]): Similarity {
  if (src.length !== dst.length || src.length < 2) {
    throw new Error("need at least two matched point pairs");
  }
  const n = src.length;
  let mx = 0;
  let my = 0;
  let nx = 0;
  let ny = 0;
  for (let i = 0; i < n; i++) {
    mx += src[i][0];
    my += src[i][1];
    nx += dst[i][0];
    ny += dst[i][1];
  }
  mx /= n;
  my /= n;
  nx /= n;
  ny /= n;
  let dot = 0;
  let cross = 0;
  let norm = 0;
  for (let i = 0; i < n; i++) {
    const xs = src[i][0] - mx;
    const ys = src[i][1] - my;
    const xd = dst[i][0] - nx;
    const yd = dst[i][1] - ny;
    dot += xs * xd + ys * yd;
    cross += xs * yd - ys * xd;
    norm += xs * xs + ys * ys;
  }
  if (norm === 0) {
    throw new Error("source points are coincident; similarity is undefined");
  }
  const a = dot / norm;
  const b = cross / norm;
  return {
    a,
    b,
    tx: nx - (a * mx - b * my),
    ty: ny - (b * mx + a * my),
  };
}

export interface AlignResult {
  image: GrayImage;
  /** True when landmark detection failed and the fallback path was taken. */
  usedFallback: boolean;
}

/**
 * Warp a frame so its landmark anchors land on the canonical template.
 */
export function alignFace(img: GrayImage, landmarks: Landmarks68, size: number): GrayImage {
  const transform = estimateSimilarity(anchorPoints(landmarks), templateAnchors(size));
  return warpSimilarity(img, transform, size, size);
}

/**
 * Full face preprocessing for one frame: super-resolve, detect landmarks,
 * and align to the canonical crop. On detection failure the super-resolved
 * frame is resized without alignment and the result is flagged.
 */
export function preprocessFace(
  img: GrayImage,
  upscaler: Upscaler,
  detector: LandmarkDetector,
  size: number
): AlignResult {
  const upscaled = upscaler.upscale(img);
  const landmarks = detector.detect(upscaled);
  if (landmarks === null) {
    return { image: resize(upscaled, size, size), usedFallback: true };
  }
  return { image: alignFace(upscaled, landmarks, size), usedFallback: false };
}
