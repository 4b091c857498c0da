import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import path from "node:path";
import { test } from "node:test";

import { encodeBasis, BasisPreview } from "../src/basis";
import { parsePfm } from "../src/pfm";
import { recombineLinear, recombineToRgba } from "../src/recombine";

const fixtures = JSON.parse(readFileSync(
  path.join(__dirname, "..", "..", "test", "fixtures", "recombine.json"),
  "utf-8"));

function b64ToBuffer(b64: string): ArrayBuffer {
  const buf = Buffer.from(b64, "base64");
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

function loadBases(): BasisPreview[] {
  return fixtures.bases_pfm_b64.map((b64: string) => {
    const pfm = parsePfm(b64ToBuffer(b64));
    return encodeBasis(pfm.data, pfm.width, pfm.height);
  });
}

test("client recombination matches the server within 1/255 post-display",
     () => {
  const bases = loadBases();
  for (const c of fixtures.cases) {
    const rgba = recombineToRgba(bases, c.weights, c.gamma);
    const expected: number[] = c.expected_srgb;
    let worst = 0;
    for (let i = 0; i < expected.length; i++) {
      const px = Math.floor(i / 3);
      const ch = i % 3;
      const got = rgba[px * 4 + ch];
      worst = Math.max(worst, Math.abs(got - expected[i]));
    }
    assert.ok(worst <= 1,
              `w=${c.weights} gamma=${c.gamma}: max diff ${worst} > 1/255`);
  }
});

test("zeroing a slider removes exactly that light's contribution", () => {
  const bases = loadBases();
  const on = recombineLinear(bases, [1, 1, 1], 1.0);
  const off = recombineLinear(bases, [1, 0, 1], 1.0);
  const b1 = bases[1];
  for (let i = 0; i < on.length; i++) {
    const contrib = b1.lut[b1.samples[i]];
    assert.ok(Math.abs(on[i] - off[i] - contrib) < 1e-6);
  }
});

test("lowering gamma toward 1 darkens every sub-unit pixel monotonically",
     () => {
  const bases = loadBases();
  const bright = recombineLinear(bases, [1, 1, 1], 1 / 2.2);
  const dark = recombineLinear(bases, [1, 1, 1], 1.0);
  const sums = recombineLinear(bases, [1, 1, 1], 1.0); // s^1 = s
  for (let i = 0; i < bright.length; i++) {
    if (sums[i] < 1 - 1e-9 && sums[i] > 1e-9) {
      assert.ok(dark[i] < bright[i] + 1e-9);
    }
  }
});

test("weight and dimension validation", () => {
  const bases = loadBases();
  assert.throws(() => recombineLinear(bases, [1, 2], 1.0), /weights/);
  assert.throws(() => recombineLinear([], [], 1.0), /no basis/);
});
