/**
 * Client-side overlay compositing.
 *
 * The blend is the same definition the backend uses for its verification
 * renders: out = round((1 - alpha) * base + alpha * color) on mask
 * foreground, background untouched. No analysis happens here - every pixel
 * decision comes from mask bytes served by the API.
 */

export type Rgb = [number, number, number];

export const ARTERY_COLOR: Rgb = [255, 64, 64];
export const VEIN_COLOR: Rgb = [64, 64, 255];

// Palette the A/V map PNG carries: index 1 artery, index 2 vein.
const AV_PALETTE: Record<string, 'artery' | 'vein'> = {
  '255,64,64': 'artery',
  '64,64,255': 'vein',
};

/** Blend `color` over base RGBA wherever the mask RGBA is foreground (R >= 128). */
export function compositeMask(
  base: Uint8ClampedArray,
  mask: Uint8ClampedArray,
  color: Rgb,
  alpha: number,
): Uint8ClampedArray {
  if (base.length !== mask.length) {
    throw new Error(`overlay size mismatch: ${base.length} vs ${mask.length}`);
  }
  const out = new Uint8ClampedArray(base);
  for (let i = 0; i < base.length; i += 4) {
    if (mask[i] >= 128) {
      out[i] = Math.round((1 - alpha) * base[i] + alpha * color[0]);
      out[i + 1] = Math.round((1 - alpha) * base[i + 1] + alpha * color[1]);
      out[i + 2] = Math.round((1 - alpha) * base[i + 2] + alpha * color[2]);
    }
  }
  return out;
}

/** Blend artery/vein colors over the base using the decoded A/V map pixels. */
export function compositeAvMap(
  base: Uint8ClampedArray,
  avRgba: Uint8ClampedArray,
  alpha: number,
): Uint8ClampedArray {
  if (base.length !== avRgba.length) {
    throw new Error(`overlay size mismatch: ${base.length} vs ${avRgba.length}`);
  }
  const out = new Uint8ClampedArray(base);
  for (let i = 0; i < base.length; i += 4) {
    const key = `${avRgba[i]},${avRgba[i + 1]},${avRgba[i + 2]}`;
    const kind = AV_PALETTE[key];
    if (!kind) continue;
    const color = kind === 'artery' ? ARTERY_COLOR : VEIN_COLOR;
    out[i] = Math.round((1 - alpha) * base[i] + alpha * color[0]);
    out[i + 1] = Math.round((1 - alpha) * base[i + 1] + alpha * color[1]);
    out[i + 2] = Math.round((1 - alpha) * base[i + 2] + alpha * color[2]);
  }
  return out;
}

/** Foreground test used by the fidelity check: exactly the mask's pixels. */
export function maskForeground(mask: Uint8ClampedArray): boolean[] {
  const out: boolean[] = new Array(mask.length / 4);
  for (let i = 0; i < mask.length; i += 4) {
    out[i / 4] = mask[i] >= 128;
  }
  return out;
}
