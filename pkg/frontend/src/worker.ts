/** Recombination worker: keeps slider interaction off the UI thread. */

import { BasisPreview } from "./basis";
import { recombineToRgba } from "./recombine";

interface RecombineRequest {
  kind: "recombine";
  requestId: number;
  bases: BasisPreview[];
  weights: number[];
  gamma: number;
}

self.onmessage = (ev: MessageEvent<RecombineRequest>) => {
  const msg = ev.data;
  if (msg.kind !== "recombine") return;
  // rebuild decode LUTs (Float32Array survives structured clone, but keep the
  // worker self-sufficient in case callers strip them)
  for (const b of msg.bases) {
    if (!b.lut || b.lut.length !== 256) {
      const lut = new Float32Array(256);
      for (let v = 0; v < 256; v++) lut[v] = Math.pow(v / 255, 2.2) * b.scale;
      b.lut = lut;
    }
  }
  const rgba = recombineToRgba(msg.bases, msg.weights, msg.gamma);
  (self as unknown as Worker).postMessage(
    { requestId: msg.requestId, rgba }, [rgba.buffer]);
};
