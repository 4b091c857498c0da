import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import path from "node:path";
import { test } from "node:test";

import { buildBlurPyramid, previewDof } from "../src/dof";
import { srgbEncodeU8 } from "../src/color";
import { parsePfm } from "../src/pfm";

const fixtures = JSON.parse(readFileSync(
  path.join(__dirname, "..", "..", "test", "fixtures", "dof.json"), "utf-8"));

function b64ToBuffer(b64: string): ArrayBuffer {
  const buf = Buffer.from(b64, "base64");
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

test("zero aperture is an exact passthrough", () => {
  const img = parsePfm(b64ToBuffer(fixtures.image_pfm_b64));
  const depth = parsePfm(b64ToBuffer(fixtures.depth_pfm_b64));
  const pyr = buildBlurPyramid(img.data, img.width, img.height);
  const out = previewDof(pyr, depth.data, 3.0, 0.0);
  for (let i = 0; i < out.length; i++) {
    assert.equal(out[i], img.data[i]);
  }
});

test("preview stays within 4/255 MAE of the exact server result", () => {
  const img = parsePfm(b64ToBuffer(fixtures.image_pfm_b64));
  const depth = parsePfm(b64ToBuffer(fixtures.depth_pfm_b64));
  const pyr = buildBlurPyramid(img.data, img.width, img.height);
  const out = previewDof(pyr, depth.data, fixtures.focus, fixtures.aperture);
  const expected: number[] = fixtures.expected_srgb;
  let sum = 0;
  for (let i = 0; i < expected.length; i++) {
    sum += Math.abs(srgbEncodeU8(out[i]) - expected[i]);
  }
  const mae = sum / expected.length;
  assert.ok(mae <= 4.0, `MAE ${mae.toFixed(2)} exceeds 4/255`);
});

test("in-focus plane stays sharp in the preview", () => {
  const img = parsePfm(b64ToBuffer(fixtures.image_pfm_b64));
  const depth = parsePfm(b64ToBuffer(fixtures.depth_pfm_b64));
  const pyr = buildBlurPyramid(img.data, img.width, img.height);
  const out = previewDof(pyr, depth.data, fixtures.focus, fixtures.aperture);
  // left half sits at the focal depth: identical to the sharp level
  const w = img.width;
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < Math.floor(w / 2) - 1; x++) {
      for (let c = 0; c < 3; c++) {
        const i = (y * w + x) * 3 + c;
        assert.ok(Math.abs(out[i] - img.data[i]) < 1e-6);
      }
    }
  }
});
