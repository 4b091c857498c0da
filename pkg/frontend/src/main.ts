/** Editor entry point: canvas, sliders, placement, and DOF scrubbing.
 *
 * Keyboard/mouse conventions: click places the selected object, mouse wheel
 * over the canvas rescales the pending placement, right-click rotates it (the
 * context menu is intercepted over the canvas only).
 */

import { SceneApi } from "./api";
import { BasisPreview, encodeBasis } from "./basis";
import { buildBlurPyramid, previewDof, SIGMA_LEVELS, BlurPyramid } from "./dof";
import { linearToRgba } from "./color";
import { normalAtPixel } from "./normals";
import { parsePfm } from "./pfm";
import { recombineLinear } from "./recombine";
import { EditorSession } from "./session";

const CATALOG = ["cube", "sphere", "pedestal"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const base = (new URLSearchParams(location.search)).get("server") ??
    "http://127.0.0.1:8080";
  const api = new SceneApi(base);
  const scene = await api.getScene();
  const session = new EditorSession(api, scene);

  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d")!;
  const status = el<HTMLDivElement>("status");
  const sliders = el<HTMLDivElement>("sliders");

  status.textContent = "loading depth and basis renders...";
  const depthPfm = parsePfm(await api.getDepthPfm());
  session.depthPreview = depthPfm.data;
  const width = depthPfm.width;
  const height = depthPfm.height;
  canvas.width = width;
  canvas.height = height;

  const bases: BasisPreview[] = [];
  for (let k = 0; k < scene.lights.length; k++) {
    const pfm = parsePfm(await api.getBasisPfm(k));
    const half = width * height > 512 * 384;
    bases.push(encodeBasis(pfm.data, pfm.width, pfm.height, half));
  }
  session.basisPreviews = bases;
  status.textContent = "";

  const worker = new Worker("js/worker.js", { type: "module" });
  let requestId = 0;
  let inFlight = false;
  let wantAnother = false;
  let pyramid: BlurPyramid | null = null;

  const compositeImg = new Image();
  compositeImg.crossOrigin = "anonymous";
  let showComposite = false;

  function presentRgba(rgba: Uint8ClampedArray, w: number, h: number): void {
    const image = new ImageData(
      new Uint8ClampedArray(rgba.buffer as ArrayBuffer, rgba.byteOffset,
                            rgba.length), w, h);
    if (w === canvas.width && h === canvas.height) {
      ctx.putImageData(image, 0, 0);
    } else {
      // preview may be half resolution; scale up through a scratch canvas
      const scratch = document.createElement("canvas");
      scratch.width = w;
      scratch.height = h;
      scratch.getContext("2d")!.putImageData(image, 0, 0);
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(scratch, 0, 0, canvas.width, canvas.height);
    }
    if (showComposite && compositeImg.complete) {
      ctx.globalAlpha = session.compositeStale ? 0.35 : 1.0;
      ctx.drawImage(compositeImg, 0, 0, canvas.width, canvas.height);
      ctx.globalAlpha = 1.0;
    }
    drawDecal();
  }

  function requestRecombine(): void {
    if (!session.basesLoaded) return;
    if (inFlight) {
      wantAnother = true;
      return;
    }
    inFlight = true;
    worker.postMessage({
      kind: "recombine",
      requestId: ++requestId,
      bases: session.basisPreviews,
      weights: session.weights,
      gamma: session.gamma,
    });
  }

  worker.onmessage = (ev: MessageEvent<{ requestId: number;
                                         rgba: Uint8ClampedArray }>) => {
    inFlight = false;
    const b = session.basisPreviews[0];
    let rgba = ev.data.rgba;
    if (session.aperture > 0 && session.depthPreview) {
      // approximate DOF over the current recombination
      const linear = recombineLinear(session.basisPreviews, session.weights,
                                     session.gamma);
      if (!pyramid) {
        pyramid = buildBlurPyramid(linear, b.width, b.height);
      }
      const depth = sampleDepthTo(b.width, b.height);
      const blurred = previewDof(pyramid, depth, session.focus,
                                 session.aperture, SIGMA_LEVELS);
      rgba = linearToRgba(blurred);
    }
    presentRgba(rgba, b.width, b.height);
    if (wantAnother) {
      wantAnother = false;
      requestRecombine();
    }
  };

  function sampleDepthTo(w: number, h: number): Float32Array {
    const out = new Float32Array(w * h);
    for (let y = 0; y < h; y++) {
      const sy = Math.min(height - 1, Math.round(y * height / h));
      for (let x = 0; x < w; x++) {
        const sx = Math.min(width - 1, Math.round(x * width / w));
        out[y * w + x] = depthPfm.data[sy * width + sx];
      }
    }
    return out;
  }

  // --- lighting sliders (local recombination only; no server calls) ---
  scene.lights.forEach((light, k) => {
    const row = document.createElement("div");
    row.className = "slider-row";
    const label = document.createElement("label");
    label.textContent = `${light.type} ${k}`;
    const input = document.createElement("input");
    input.type = "range";
    input.min = "0";
    input.max = String(Math.max(2, 3 * session.solvedWeights[k]));
    input.step = "0.01";
    input.value = String(session.weights[k]);
    input.addEventListener("input", () => {
      session.setWeight(k, Number(input.value));
      pyramid = null;
      requestRecombine();
    });
    row.append(label, input);
    sliders.append(row);
  });
  const gammaInput = el<HTMLInputElement>("gamma");
  gammaInput.value = String(session.gamma);
  gammaInput.addEventListener("input", () => {
    session.setGamma(Number(gammaInput.value));
    pyramid = null;
    requestRecombine();
  });

  // --- DOF scrubbing ---
  const focusInput = el<HTMLInputElement>("focus");
  const apertureInput = el<HTMLInputElement>("aperture");
  const scrub = () => {
    session.setDof(Number(focusInput.value), Number(apertureInput.value));
    requestRecombine();
  };
  focusInput.addEventListener("input", scrub);
  apertureInput.addEventListener("input", scrub);
  el<HTMLButtonElement>("dof-exact").addEventListener("click", async () => {
    status.textContent = "rendering exact depth of field...";
    const blob = await api.dofExact(session.focus, session.aperture,
                                    session.weights, session.gamma);
    compositeImg.src = URL.createObjectURL(blob);
    compositeImg.onload = () => {
      showComposite = true;
      requestRecombine();
      status.textContent = "";
    };
  });

  // --- placement ---
  const picker = el<HTMLSelectElement>("object");
  for (const name of CATALOG) {
    const opt = document.createElement("option");
    opt.value = name;
    opt.textContent = name;
    picker.append(opt);
  }
  let pendingScale = 1.0;
  let pendingRotation = 0.0;
  let decalAt: { x: number; y: number } | null = null;

  function drawDecal(): void {
    if (!decalAt || !session.depthPreview) return;
    const n = normalAtPixel(session.depthPreview, width, height,
                            { f: scene.camera.f, cx: scene.camera.cx,
                              cy: scene.camera.cy },
                            decalAt.x, decalAt.y);
    const d = depthPfm.data[decalAt.y * width + decalAt.x];
    // footprint radius scales with 1/depth (perspective) and user scale
    const r = 0.08 * width * pendingScale * (2.0 / Math.max(d, 0.1));
    const squash = Math.max(0.15, Math.abs(n[1]));  // foreshortening
    ctx.save();
    ctx.strokeStyle = "rgba(255, 220, 80, 0.9)";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.ellipse(decalAt.x, decalAt.y, r, r * squash, 0, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.restore();
  }

  canvas.addEventListener("mousemove", (ev) => {
    const rect = canvas.getBoundingClientRect();
    decalAt = {
      x: Math.floor((ev.clientX - rect.left) * canvas.width / rect.width),
      y: Math.floor((ev.clientY - rect.top) * canvas.height / rect.height),
    };
    requestRecombine();
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    pendingScale = Math.max(0.1, pendingScale * (ev.deltaY < 0 ? 1.1 : 0.9));
    requestRecombine();
  }, { passive: false });
  canvas.addEventListener("contextmenu", (ev) => {
    // right-click rotates; suppress the menu over the canvas only
    ev.preventDefault();
    pendingRotation = (pendingRotation + 30) % 360;
    requestRecombine();
  });
  canvas.addEventListener("click", async (ev) => {
    if (!decalAt) return;
    const obj = session.beginPlacement(picker.value, decalAt.x, decalAt.y,
                                       pendingScale, pendingRotation);
    status.textContent = `inserting ${obj.catalogId}...`;
    try {
      await session.submitPlacement(obj);
      compositeImg.src = obj.resultUrl!;
      compositeImg.onload = () => {
        showComposite = true;
        requestRecombine();
        status.textContent = "";
      };
    } catch (err) {
      status.textContent = `insert failed: ${err}`;
    }
  });

  session.onChange(() => {
    el<HTMLSpanElement>("stale").textContent =
      session.compositeStale ? "(composite is stale; re-insert to refresh)" : "";
  });

  requestRecombine();
}

boot().catch((err) => {
  el<HTMLDivElement>("status").textContent = `failed to load scene: ${err}`;
});
