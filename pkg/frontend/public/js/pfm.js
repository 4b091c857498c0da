/** Portable Float Map reader for scene artifacts fetched from the service.
 * Supports color "PF" and grayscale "Pf", little-endian (negative scale),
 * and flips the bottom-up file rows into top-down order. */
export function parsePfm(buffer) {
    const bytes = new Uint8Array(buffer);
    // header: magic \n width height \n scale \n
    let pos = 0;
    const readLine = () => {
        let end = pos;
        while (end < bytes.length && bytes[end] !== 0x0a)
            end++;
        if (end >= bytes.length)
            throw new Error("truncated PFM header");
        const line = new TextDecoder("ascii").decode(bytes.subarray(pos, end));
        pos = end + 1;
        return line;
    };
    const magic = readLine();
    let channels;
    if (magic === "PF")
        channels = 3;
    else if (magic === "Pf")
        channels = 1;
    else
        throw new Error(`bad PFM magic ${JSON.stringify(magic)}`);
    const dims = readLine().trim().split(/\s+/).map(Number);
    if (dims.length !== 2 || !dims.every((d) => Number.isInteger(d) && d > 0)) {
        throw new Error(`bad PFM dimensions line`);
    }
    const [width, height] = dims;
    const scale = Number(readLine());
    if (!(scale < 0))
        throw new Error("big-endian PFM unsupported");
    const count = width * height * channels;
    if (bytes.length - pos < count * 4)
        throw new Error("PFM payload too short");
    const src = new Float32Array(buffer.slice(pos, pos + count * 4));
    const data = new Float32Array(count);
    const rowLen = width * channels;
    for (let y = 0; y < height; y++) {
        // file rows are bottom-up
        data.set(src.subarray((height - 1 - y) * rowLen, (height - y) * rowLen), y * rowLen);
    }
    return { width, height, channels, data };
}
