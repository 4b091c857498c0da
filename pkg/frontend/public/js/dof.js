/** Interactive depth-of-field preview.
 *
 * Exact per-pixel Gaussian blur is too slow for scrubbing, so the client
 * precomputes a small pyramid of uniformly blurred copies and blends the two
 * levels bracketing each pixel's sigma = aperture * |depth - focus|. The
 * "render exact" action asks the server instead.
 */
export const SIGMA_LEVELS = [0, 0.5, 1.0, 1.6, 2.4, 3.6, 5.2, 7.5];
function gaussianKernel(sigma) {
    const r = Math.max(1, Math.ceil(3 * sigma));
    const k = new Float32Array(2 * r + 1);
    let sum = 0;
    for (let i = -r; i <= r; i++) {
        const v = Math.exp(-0.5 * (i / sigma) * (i / sigma));
        k[i + r] = v;
        sum += v;
    }
    for (let i = 0; i < k.length; i++)
        k[i] /= sum;
    return k;
}
function blurSeparable(data, width, height, sigma) {
    if (sigma <= 0)
        return data.slice();
    const k = gaussianKernel(sigma);
    const r = (k.length - 1) / 2;
    const tmp = new Float32Array(data.length);
    const out = new Float32Array(data.length);
    // horizontal, clamped edges
    for (let y = 0; y < height; y++) {
        for (let x = 0; x < width; x++) {
            for (let c = 0; c < 3; c++) {
                let acc = 0;
                for (let t = -r; t <= r; t++) {
                    const xx = Math.min(width - 1, Math.max(0, x + t));
                    acc += k[t + r] * data[(y * width + xx) * 3 + c];
                }
                tmp[(y * width + x) * 3 + c] = acc;
            }
        }
    }
    for (let y = 0; y < height; y++) {
        for (let x = 0; x < width; x++) {
            for (let c = 0; c < 3; c++) {
                let acc = 0;
                for (let t = -r; t <= r; t++) {
                    const yy = Math.min(height - 1, Math.max(0, y + t));
                    acc += k[t + r] * tmp[(yy * width + x) * 3 + c];
                }
                out[(y * width + x) * 3 + c] = acc;
            }
        }
    }
    return out;
}
export function buildBlurPyramid(linear, width, height, sigmas = SIGMA_LEVELS) {
    return {
        width,
        height,
        levels: sigmas.map((s) => blurSeparable(linear, width, height, s)),
    };
}
/** Per-pixel blend of the two pyramid levels bracketing sigma(depth). */
export function previewDof(pyr, depth, focus, aperture, sigmas = SIGMA_LEVELS, out) {
    const n = pyr.width * pyr.height;
    if (depth.length !== n)
        throw new Error("depth does not match pyramid size");
    const result = out ?? new Float32Array(n * 3);
    if (aperture === 0) {
        result.set(pyr.levels[0]);
        return result;
    }
    const top = sigmas.length - 1;
    for (let i = 0; i < n; i++) {
        const sigma = aperture * Math.abs(depth[i] - focus);
        let j = top;
        while (j > 0 && sigmas[j] > sigma)
            j--;
        let a = j;
        let b = Math.min(j + 1, top);
        let t = 0;
        if (b > a) {
            t = (sigma - sigmas[a]) / (sigmas[b] - sigmas[a]);
            t = Math.min(1, Math.max(0, t));
        }
        const la = pyr.levels[a];
        const lb = pyr.levels[b];
        for (let c = 0; c < 3; c++) {
            result[i * 3 + c] = (1 - t) * la[i * 3 + c] + t * lb[i * 3 + c];
        }
    }
    return result;
}
