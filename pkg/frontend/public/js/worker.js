/** Recombination worker: keeps slider interaction off the UI thread. */
import { recombineToRgba } from "./recombine";
self.onmessage = (ev) => {
    const msg = ev.data;
    if (msg.kind !== "recombine")
        return;
    // rebuild decode LUTs (Float32Array survives structured clone, but keep the
    // worker self-sufficient in case callers strip them)
    for (const b of msg.bases) {
        if (!b.lut || b.lut.length !== 256) {
            const lut = new Float32Array(256);
            for (let v = 0; v < 256; v++)
                lut[v] = Math.pow(v / 255, 2.2) * b.scale;
            b.lut = lut;
        }
    }
    const rgba = recombineToRgba(msg.bases, msg.weights, msg.gamma);
    self.postMessage({ requestId: msg.requestId, rgba }, [rgba.buffer]);
};
