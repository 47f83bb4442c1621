/** Browser-only raster plumbing: decoding PNGs and painting canvases.
 *
 * Kept apart from the pure overlay math; every entry point degrades to a
 * no-op when canvas APIs are unavailable (DOM test environments).
 */
import { tintMask, type Tint } from "./overlay.js";

export function canDraw(): boolean {
  if (typeof document === "undefined") return false;
  const probe = document.createElement("canvas");
  return typeof probe.getContext === "function" && probe.getContext("2d") !== null;
}

function loadImage(src: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("image decode failed"));
    img.src = src;
  });
}

export async function decodePng(base64: string): Promise<{
  width: number;
  height: number;
  rgba: Uint8ClampedArray;
}> {
  const img = await loadImage(`data:image/png;base64,${base64}`);
  const canvas = document.createElement("canvas");
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d unavailable");
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, canvas.width, canvas.height);
  return { width: data.width, height: data.height, rgba: data.data };
}

export async function paintBaseImage(
  canvas: HTMLCanvasElement,
  file: Blob,
): Promise<{ width: number; height: number }> {
  const url = URL.createObjectURL(file);
  try {
    const img = await loadImage(url);
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    canvas.getContext("2d")?.drawImage(img, 0, 0);
    return { width: img.naturalWidth, height: img.naturalHeight };
  } finally {
    URL.revokeObjectURL(url);
  }
}

export async function paintMaskOverlay(
  canvas: HTMLCanvasElement,
  maskBase64: string,
  tint: Tint,
  opacity: number,
): Promise<void> {
  const mask = await decodePng(maskBase64);
  canvas.width = mask.width;
  canvas.height = mask.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const overlay = tintMask(mask.rgba, tint, opacity) as Uint8ClampedArray<ArrayBuffer>;
  ctx.putImageData(new ImageData(overlay, mask.width, mask.height), 0, 0);
}
