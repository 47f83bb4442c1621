/** Pure overlay math: letterboxing, mask tinting, stats formatting.
 *
 * Everything here operates on plain arrays/numbers so it is testable
 * outside a browser; canvas plumbing lives in pixels.ts.
 */
import type { SegmentResponse } from "./api.js";

export interface LetterboxPlacement {
  x: number;
  y: number;
  width: number;
  height: number;
  scale: number;
}

/** Fit src into box preserving aspect ratio, centered (classic letterbox). */
export function computeLetterbox(
  srcWidth: number,
  srcHeight: number,
  boxWidth: number,
  boxHeight: number,
): LetterboxPlacement {
  const scale = Math.min(boxWidth / srcWidth, boxHeight / srcHeight);
  const width = srcWidth * scale;
  const height = srcHeight * scale;
  return {
    x: (boxWidth - width) / 2,
    y: (boxHeight - height) / 2,
    width,
    height,
    scale,
  };
}

export type Tint = readonly [number, number, number];

export const MASK_TINT: Tint = [255, 64, 64];

/**
 * Turn a decoded mask (RGBA, white = particle) into a tinted RGBA overlay.
 * Index correspondence is 1:1, which is what keeps the overlay aligned
 * pixel-for-pixel with the uploaded image.
 */
export function tintMask(
  maskRgba: Uint8ClampedArray,
  tint: Tint = MASK_TINT,
  opacity = 0.45,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(maskRgba.length);
  const alpha = Math.round(255 * opacity);
  for (let i = 0; i < maskRgba.length; i += 4) {
    if (maskRgba[i] >= 128) {
      out[i] = tint[0];
      out[i + 1] = tint[1];
      out[i + 2] = tint[2];
      out[i + 3] = alpha;
    }
    // else: fully transparent (zero-initialized)
  }
  return out;
}

/** Foreground fraction of a decoded mask; client-side stats cross-check. */
export function foregroundFraction(maskRgba: Uint8ClampedArray): number {
  let fg = 0;
  const pixels = maskRgba.length / 4;
  for (let i = 0; i < maskRgba.length; i += 4) {
    if (maskRgba[i] >= 128) fg += 1;
  }
  return pixels === 0 ? 0 : fg / pixels;
}

export interface StatsText {
  coverage: string;
  particles: string;
  threshold: string;
  elapsed: string;
  model: string;
}

/** One formatting rule shared by the view and its tests. */
export function formatStats(response: SegmentResponse): StatsText {
  return {
    coverage: `${(response.coverage_fraction * 100).toFixed(2)}%`,
    particles: `${response.particle_count}`,
    threshold: response.threshold_used.toFixed(2),
    elapsed: `${response.elapsed_ms.toFixed(1)} ms`,
    model: response.model_id,
  };
}
