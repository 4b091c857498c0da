"""HTTP service over an inferred scene directory.

Read endpoints serve the scene artifacts; relight and depth-of-field are
pure compute on the preloaded basis set; object insertion runs on a single
FIFO render worker. The scene directory itself is never written to.
"""

from __future__ import annotations

import io
import json
import os
import queue
import tempfile
import threading
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from . import fixtures
from .assets import load_scene, read_png
from .images import linear_to_srgb_u8
from .pipeline import DofParams, JobState, composite_object, depth_of_field
from .relight import recombine
from .render import BasisSet


def _png_bytes(rgb_u8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb_u8, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


class SceneService:
    """Owns the loaded scene, the basis stack, and the render-job queue."""

    def __init__(self, scene_dir: str, work_dir: str | None = None,
                 seed: int = 0, spp: int = 64):
        self.scene_dir = os.path.abspath(scene_dir)
        self.scene = load_scene(self.scene_dir)
        self.input_img = read_png(os.path.join(self.scene_dir, "input.png"))
        basis_dir = os.path.join(self.scene_dir, "basis")
        from .assets import read_pfm
        images = []
        k = 0
        while os.path.exists(os.path.join(basis_dir, f"{k}.pfm")):
            images.append(read_pfm(os.path.join(basis_dir, f"{k}.pfm")))
            k += 1
        if not images:
            raise FileNotFoundError(f"no basis renders under {basis_dir}")
        self.basis = BasisSet(images=tuple(images))
        self.solved_w = np.array([ls.intensity[0] for ls in self.scene.lights])
        self.seed = seed
        self.spp = spp
        self.work_dir = work_dir or tempfile.mkdtemp(prefix="sceneforge_")
        os.makedirs(self.work_dir, exist_ok=True)
        self.obj_dir = os.path.join(self.work_dir, "objects")
        self.objects = fixtures.write_object_catalog(self.obj_dir)
        self.jobs: dict[str, JobState] = {}
        self.results: dict[str, bytes] = {}
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._work, daemon=True)
        self._worker.start()

    # ----- compute -----

    def relight_png(self, w: list[float], gamma: float | None) -> bytes:
        w_arr = np.asarray(w, dtype=np.float64)
        if len(w_arr) != len(self.basis):
            raise ValueError(f"need {len(self.basis)} weights, got {len(w_arr)}")
        if (w_arr < 0).any():
            raise ValueError("weights must be nonnegative")
        g = self.scene.response_gamma if gamma is None else float(gamma)
        model = recombine(self.basis, w_arr, g)
        return _png_bytes(linear_to_srgb_u8(model.data))

    def dof_png(self, d: float, a: float, w: list[float] | None,
                gamma: float | None) -> bytes:
        w_arr = self.solved_w if w is None else np.asarray(w, dtype=np.float64)
        if len(w_arr) != len(self.basis):
            raise ValueError(f"need {len(self.basis)} weights, got {len(w_arr)}")
        g = self.scene.response_gamma if gamma is None else float(gamma)
        model = recombine(self.basis, w_arr, g)
        blurred = depth_of_field(model, self.scene.depth,
                                 DofParams(focal_depth=d, aperture=a))
        return _png_bytes(linear_to_srgb_u8(blurred.data))

    def submit_insert(self, obj_id: str, x: int, y: int, scale: float,
                      rotation: float) -> str:
        if obj_id not in self.objects:
            raise KeyError(f"unknown object {obj_id!r}; have {sorted(self.objects)}")
        job_id = uuid.uuid4().hex[:12]
        state = JobState(job_id=job_id, stage="basis")
        with self._lock:
            self.jobs[job_id] = state
        self._queue.put((job_id, obj_id, int(x), int(y), float(scale),
                         float(rotation)))
        return job_id

    def _work(self) -> None:
        while True:
            job_id, obj_id, x, y, scale, rotation = self._queue.get()
            state = self.jobs[job_id]
            try:
                res = composite_object(self.scene_dir, self.objects[obj_id],
                                       x, y, scale=scale,
                                       rotation_deg=rotation,
                                       seed=self.seed, spp=self.spp)
                png = _png_bytes(res.composite_png)
                out_path = os.path.join(self.work_dir, f"{job_id}.png")
                with open(out_path, "wb") as fh:
                    fh.write(png)
                with self._lock:
                    self.results[job_id] = png
                    state.artifacts["result"] = f"/result/{job_id}.png"
                    state.advance("done")
            except Exception as exc:  # surfaced through /job/{id}
                with self._lock:
                    state.error = str(exc)
            finally:
                self._queue.task_done()

    def job_state(self, job_id: str) -> JobState | None:
        with self._lock:
            return self.jobs.get(job_id)

    def result_png(self, job_id: str) -> bytes | None:
        with self._lock:
            return self.results.get(job_id)


class _Handler(BaseHTTPRequestHandler):
    service: SceneService  # set on the server class

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code: int, body: bytes, ctype: str) -> None:
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _json(self, code: int, doc) -> None:
        self._send(code, json.dumps(doc).encode(), "application/json")

    def _file(self, relpath: str, ctype: str) -> None:
        path = os.path.join(self.service.scene_dir, relpath)
        if not os.path.isfile(path):
            self._json(404, {"error": f"{relpath} not found"})
            return
        with open(path, "rb") as fh:
            self._send(200, fh.read(), ctype)

    def do_OPTIONS(self):  # CORS preflight for the browser editor
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        svc = self.service
        path = self.path.split("?")[0]
        if path == "/scene":
            self._file("scene.json", "application/json")
        elif path == "/depth.pfm":
            self._file("depth.pfm", "application/octet-stream")
        elif path == "/input.png":
            self._file("input.png", "image/png")
        elif path.startswith("/basis/") and path.endswith(".pfm"):
            name = path[len("/basis/"):]
            if not name[:-4].isdigit():
                self._json(404, {"error": "bad basis index"})
                return
            self._file(os.path.join("basis", name), "application/octet-stream")
        elif path.startswith("/job/"):
            state = svc.job_state(path[len("/job/"):])
            if state is None:
                self._json(404, {"error": "unknown job"})
            else:
                self._json(200, state.to_json())
        elif path.startswith("/result/") and path.endswith(".png"):
            png = svc.result_png(path[len("/result/"):-4])
            if png is None:
                self._json(404, {"error": "result not ready"})
            else:
                self._send(200, png, "image/png")
        else:
            self._json(404, {"error": f"no route {path}"})

    def do_POST(self):
        svc = self.service
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError) as exc:
            self._json(400, {"error": f"bad JSON body: {exc}"})
            return
        try:
            if self.path == "/relight":
                png = svc.relight_png(body["w"], body.get("gamma"))
                self._send(200, png, "image/png")
            elif self.path == "/dof":
                png = svc.dof_png(float(body["d"]), float(body["a"]),
                                  body.get("w"), body.get("gamma"))
                self._send(200, png, "image/png")
            elif self.path == "/insert":
                job_id = svc.submit_insert(body["obj_id"], body["x"], body["y"],
                                           body.get("scale", 1.0),
                                           body.get("rotation", 0.0))
                self._json(200, {"job_id": job_id})
            else:
                self._json(404, {"error": f"no route {self.path}"})
        except (KeyError, ValueError, IndexError) as exc:
            self._json(400, {"error": str(exc)})


def make_server(scene_dir: str, port: int = 0, work_dir: str | None = None,
                seed: int = 0, spp: int = 64) -> ThreadingHTTPServer:
    """Bind the service; port 0 picks an ephemeral port. Call serve_forever
    (or run it on a thread) to start handling requests."""
    service = SceneService(scene_dir, work_dir=work_dir, seed=seed, spp=spp)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
    httpd.service = service  # type: ignore[attr-defined]
    return httpd


def serve(scene_dir: str, port: int, work_dir: str | None = None,
          seed: int = 0, spp: int = 64) -> None:
    httpd = make_server(scene_dir, port, work_dir, seed, spp)
    host, bound_port = httpd.server_address
    print(f"serving {scene_dir} on http://{host}:{bound_port}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        httpd.shutdown()
