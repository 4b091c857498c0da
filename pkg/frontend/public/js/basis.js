/** Compact client-side basis representation.
 *
 * Browsers handle float textures inconsistently, so each basis render is held
 * as gamma-compressed 8-bit samples plus one shared scale factor:
 *   linear = (u8 / 255)^ENC_GAMMA * scale
 * The 1/ENC_GAMMA compression keeps relative precision in the darks, which is
 * what bounds the post-display error of live recombination.
 */
export const ENC_GAMMA = 2.2;
function decodeLut(scale) {
    const lut = new Float32Array(256);
    for (let v = 0; v < 256; v++) {
        lut[v] = Math.pow(v / 255.0, ENC_GAMMA) * scale;
    }
    return lut;
}
/** Box-average 2x2 downsample of linear RGB data. */
export function downsampleHalf(data, width, height) {
    const w = Math.max(1, width >> 1);
    const h = Math.max(1, height >> 1);
    const out = new Float32Array(w * h * 3);
    for (let y = 0; y < h; y++) {
        const y0 = Math.min(2 * y, height - 1);
        const y1 = Math.min(2 * y + 1, height - 1);
        for (let x = 0; x < w; x++) {
            const x0 = Math.min(2 * x, width - 1);
            const x1 = Math.min(2 * x + 1, width - 1);
            for (let c = 0; c < 3; c++) {
                out[(y * w + x) * 3 + c] = 0.25 * (data[(y0 * width + x0) * 3 + c] + data[(y0 * width + x1) * 3 + c] +
                    data[(y1 * width + x0) * 3 + c] + data[(y1 * width + x1) * 3 + c]);
            }
        }
    }
    return { data: out, width: w, height: h };
}
export function encodeBasis(data, width, height, halfRes = false) {
    let src = data;
    let w = width;
    let h = height;
    if (halfRes) {
        const d = downsampleHalf(data, width, height);
        src = d.data;
        w = d.width;
        h = d.height;
    }
    let peak = 0;
    for (let i = 0; i < src.length; i++) {
        if (src[i] > peak)
            peak = src[i];
    }
    const scale = peak > 0 ? peak : 1.0;
    const samples = new Uint8Array(src.length);
    const inv = 1.0 / ENC_GAMMA;
    for (let i = 0; i < src.length; i++) {
        const t = Math.pow(Math.max(src[i], 0) / scale, inv);
        samples[i] = Math.min(255, Math.floor(t * 255.0 + 0.5));
    }
    return { width: w, height: h, samples, scale, lut: decodeLut(scale) };
}
export function decodeBasisPixel(b, index) {
    return b.lut[b.samples[index]];
}
