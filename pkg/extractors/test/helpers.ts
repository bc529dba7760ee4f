import { GrayImage, makeImage } from "../src/images.js";
import { Point } from "../src/align.js";

/** Add a Gaussian brightness blob centered at (cx, cy). */
export function addBlob(
  img: GrayImage,
  cx: number,
  cy: number,
  amplitude: number,
  sigma: number
): void {
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      img.data[y * img.width + x] += amplitude * Math.exp(-d2 / (2 * sigma * sigma));
    }
  }
}

/**
 * Synthetic face: dim background with bright blobs at the two eyes and the
 * mouth, the pattern the stub landmark detector localizes.
 */
export function makeFace(
  width: number,
  height: number,
  leftEye: Point,
  rightEye: Point,
  mouth: Point,
  background = 20
): GrayImage {
  const img = makeImage(width, height);
  img.data.fill(background);
  const sigma = Math.max(2, width / 16);
  addBlob(img, leftEye[0], leftEye[1], 200, sigma);
  addBlob(img, rightEye[0], rightEye[1], 200, sigma);
  addBlob(img, mouth[0], mouth[1], 200, sigma);
  for (let i = 0; i < img.data.length; i++) {
    img.data[i] = Math.min(255, img.data[i]);
  }
  return img;
}

/** Mean absolute intensity difference between two equal-size images. */
export function meanAbsDiff(a: GrayImage, b: GrayImage): number {
  let sum = 0;
  for (let i = 0; i < a.data.length; i++) {
    sum += Math.abs(a.data[i] - b.data[i]);
  }
  return sum / a.data.length;
}
