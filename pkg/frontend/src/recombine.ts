/** Live relighting math: (sum_k w_k B_k)^gamma followed by the shared display
 * transform. Pure functions so the worker and the tests share them. */

import { BasisPreview } from "./basis";
import { srgbEncodeU8 } from "./color";

export function recombineLinear(
  bases: BasisPreview[], weights: number[], gamma: number,
  out?: Float32Array,
): Float32Array {
  if (bases.length === 0) throw new Error("no basis previews loaded");
  if (weights.length !== bases.length) {
    throw new Error(`${weights.length} weights for ${bases.length} bases`);
  }
  const n = bases[0].samples.length;
  const linear = out ?? new Float32Array(n);
  linear.fill(0);
  for (let k = 0; k < bases.length; k++) {
    const w = weights[k];
    if (w === 0) continue;
    const { samples, lut } = bases[k];
    if (samples.length !== n) throw new Error("basis dimensions disagree");
    for (let i = 0; i < n; i++) {
      linear[i] += w * lut[samples[i]];
    }
  }
  for (let i = 0; i < n; i++) {
    linear[i] = Math.pow(Math.max(linear[i], 0), gamma);
  }
  return linear;
}

/** Full slider path: recombine and encode to RGBA canvas bytes. */
export function recombineToRgba(
  bases: BasisPreview[], weights: number[], gamma: number,
  out?: Uint8ClampedArray,
): Uint8ClampedArray {
  const linear = recombineLinear(bases, weights, gamma);
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
