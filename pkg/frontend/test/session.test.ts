import assert from "node:assert/strict";
import { test } from "node:test";

import { FetchLike, SceneApi, SceneDoc } from "../src/api";
import { EditorSession } from "../src/session";

const SCENE: SceneDoc = {
  camera: { f: 100, cx: 63.5, cy: 47.5, rotation: [1, 0, 0, 0, 1, 0, 0, 0, 1] },
  depth: "depth.pfm",
  albedo: "albedo.pfm",
  gamma: 0.42,
  lights: [
    { type: "quad", intensity: [1.5, 1.5, 1.5] },
    { type: "ibl", intensity: [0.4, 0.4, 0.4] },
  ],
};

interface Call {
  url: string;
  body?: unknown;
}

function mockApi(jobScript: Array<{ stage: string; error?: string | null }>) {
  const calls: Call[] = [];
  let jobPolls = 0;
  const fetchImpl: FetchLike = async (url, init) => {
    const body = init?.body ? JSON.parse(init.body as string) : undefined;
    calls.push({ url, body });
    const respond = (doc: unknown, status = 200) =>
      new Response(JSON.stringify(doc), {
        status, headers: { "Content-Type": "application/json" },
      });
    if (url.endsWith("/insert")) {
      return respond({ job_id: "job42" });
    }
    if (url.includes("/job/")) {
      const step = jobScript[Math.min(jobPolls++, jobScript.length - 1)];
      return respond({
        job_id: "job42", stage: step.stage,
        progress: step.stage === "done" ? 1 : 0.5,
        artifacts: step.stage === "done"
          ? { result: "/result/job42.png" } : {},
        error: step.error ?? null,
      });
    }
    return respond({ error: `no mock for ${url}` }, 404);
  };
  return { api: new SceneApi("http://test", fetchImpl), calls };
}

test("sliders clamp at zero and never touch the server", () => {
  const { api, calls } = mockApi([]);
  const session = new EditorSession(api, SCENE);
  assert.deepEqual(session.weights, [1.5, 0.4]);
  session.setWeight(0, -3.0);
  assert.equal(session.weights[0], 0);
  session.setWeight(1, 2.25);
  session.setGamma(0.01);
  assert.equal(session.gamma, 0.1);
  assert.throws(() => session.setWeight(5, 1.0), RangeError);
  assert.equal(calls.length, 0, "slider interaction must stay client-side");
});

test("dof scrub state validates and stays client-side", () => {
  const { api, calls } = mockApi([]);
  const session = new EditorSession(api, SCENE);
  session.setDof(3.5, 1.25);
  assert.equal(session.focus, 3.5);
  assert.equal(session.aperture, 1.25);
  assert.throws(() => session.setDof(0, 1), RangeError);
  assert.throws(() => session.setDof(1, -1), RangeError);
  assert.equal(calls.length, 0);
});

test("insert flow: submit, poll to done, exactly one job per object",
     async () => {
  const { api, calls } = mockApi([
    { stage: "basis" }, { stage: "basis" }, { stage: "done" }]);
  const session = new EditorSession(api, SCENE);
  const placed = session.beginPlacement("cube", 40, 60, 1.0, 90);
  const submit = session.submitPlacement(placed);
  await assert.rejects(async () => session.submitPlacement(placed),
                       /in-flight/);
  await submit;
  assert.equal(placed.resultUrl, "http://test/result/job42.png");
  const insertCalls = calls.filter((c) => c.url.endsWith("/insert"));
  assert.equal(insertCalls.length, 1);
  assert.deepEqual(insertCalls[0].body, {
    obj_id: "cube", x: 40, y: 60, scale: 1.0, rotation: 90,
  });
});

test("failed insert clears the placement and surfaces the stage error",
     async () => {
  const { api } = mockApi([{ stage: "basis", error: "[basis] exploded" }]);
  const session = new EditorSession(api, SCENE);
  const placed = session.beginPlacement("sphere", 10, 10, 1, 0);
  await assert.rejects(() => session.submitPlacement(placed), /exploded/);
  assert.equal(session.placed.length, 0);
});

test("slider edits after a composite mark it stale", async () => {
  const { api } = mockApi([{ stage: "done" }]);
  const session = new EditorSession(api, SCENE);
  const placed = session.beginPlacement("cube", 1, 2, 1, 0);
  await session.submitPlacement(placed);
  assert.equal(session.compositeStale, false);
  session.setWeight(0, 0.9);
  assert.equal(session.compositeStale, true);
});
