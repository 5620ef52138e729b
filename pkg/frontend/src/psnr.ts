/** Client-side PSNR between two same-size RGBA pixel buffers (0..255).
 *
 * Used only for the compare-mode badge; all rendering stays on the service.
 */

export const PSNR_CAP = 99.0;

export function psnrRgba(
  a: Uint8ClampedArray | Uint8Array,
  b: Uint8ClampedArray | Uint8Array,
): number {
  if (a.length !== b.length || a.length % 4 !== 0) {
    throw new Error(`buffer lengths differ or are not RGBA: ${a.length} vs ${b.length}`);
  }
  let sum = 0;
  let n = 0;
  for (let i = 0; i < a.length; i += 4) {
    for (let c = 0; c < 3; c++) {
      const d = (a[i + c] - b[i + c]) / 255;
      sum += d * d;
      n++;
    }
  }
  const mse = sum / n;
  if (mse === 0) return PSNR_CAP;
  return Math.min(PSNR_CAP, 10 * Math.log10(1 / mse));
}
