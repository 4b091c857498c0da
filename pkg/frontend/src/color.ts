/** Display transform shared with the server: linear radiance -> clamp -> sRGB.
 * Must match the service byte-for-byte (round half-up of 255 * encoded). */

export function srgbEncode(x: number): number {
  const v = x <= 0 ? 0 : x >= 1 ? 1 : x;
  return v <= 0.0031308 ? 12.92 * v : 1.055 * Math.pow(v, 1 / 2.4) - 0.055;
}

export function srgbEncodeU8(x: number): number {
  return Math.floor(srgbEncode(x) * 255.0 + 0.5);
}

export function srgbDecode(u8: number): number {
  const x = u8 / 255.0;
  return x <= 0.04045 ? x / 12.92 : Math.pow((x + 0.055) / 1.055, 2.4);
}

/** Linear RGB float buffer -> RGBA bytes for a canvas. */
export function linearToRgba(
  linear: Float32Array,
  out?: Uint8ClampedArray,
): Uint8ClampedArray {
  const n = linear.length / 3;
  const rgba = out ?? new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    rgba[i * 4] = srgbEncodeU8(linear[i * 3]);
    rgba[i * 4 + 1] = srgbEncodeU8(linear[i * 3 + 1]);
    rgba[i * 4 + 2] = srgbEncodeU8(linear[i * 3 + 2]);
    rgba[i * 4 + 3] = 255;
  }
  return rgba;
}
