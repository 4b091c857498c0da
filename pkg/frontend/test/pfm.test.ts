import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import path from "node:path";
import { test } from "node:test";

import { parsePfm } from "../src/pfm";

const fixtures = JSON.parse(readFileSync(
  path.join(__dirname, "..", "..", "test", "fixtures", "pfm.json"), "utf-8"));

function b64ToBuffer(b64: string): ArrayBuffer {
  const buf = Buffer.from(b64, "base64");
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

test("parses color PFM with exact float preservation", () => {
  const img = parsePfm(b64ToBuffer(fixtures.pfm_b64));
  assert.equal(img.width, fixtures.width);
  assert.equal(img.height, fixtures.height);
  assert.equal(img.channels, 3);
  const expected: number[] = fixtures.values;
  assert.equal(img.data.length, expected.length);
  for (let i = 0; i < expected.length; i++) {
    assert.equal(img.data[i], Math.fround(expected[i]));
  }
});

test("parses grayscale PFM", () => {
  const img = parsePfm(b64ToBuffer(fixtures.gray_b64));
  assert.equal(img.channels, 1);
  assert.equal(img.data.length, img.width * img.height);
});

test("rejects malformed headers", () => {
  const bad = new TextEncoder().encode("P6\n1 1\n-1.0\n\0\0\0\0").buffer;
  assert.throws(() => parsePfm(bad as ArrayBuffer), /magic/);
  const bigEndian = new TextEncoder().encode("PF\n1 1\n1.0\n" + "\0".repeat(12));
  assert.throws(() => parsePfm(bigEndian.buffer as ArrayBuffer),
                /big-endian/);
});
