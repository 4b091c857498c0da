/** Surface normal at a pixel from the downloaded depth map, used to orient
 * the placement footprint decal before an insert is submitted. */

export interface CameraIntrinsics {
  f: number;
  cx: number;
  cy: number;
}

function unproject(
  depth: Float32Array, width: number, cam: CameraIntrinsics,
  x: number, y: number,
): [number, number, number] {
  const d = depth[y * width + x];
  return [d * (x - cam.cx) / cam.f, d * (y - cam.cy) / cam.f, d];
}

export function normalAtPixel(
  depth: Float32Array, width: number, height: number, cam: CameraIntrinsics,
  x: number, y: number,
): [number, number, number] {
  const x0 = Math.max(0, x - 1);
  const x1 = Math.min(width - 1, x + 1);
  const y0 = Math.max(0, y - 1);
  const y1 = Math.min(height - 1, y + 1);
  const pxa = unproject(depth, width, cam, x1, y);
  const pxb = unproject(depth, width, cam, x0, y);
  const pya = unproject(depth, width, cam, x, y1);
  const pyb = unproject(depth, width, cam, x, y0);
  const tx = [pxa[0] - pxb[0], pxa[1] - pxb[1], pxa[2] - pxb[2]];
  const ty = [pya[0] - pyb[0], pya[1] - pyb[1], pya[2] - pyb[2]];
  let nx = tx[1] * ty[2] - tx[2] * ty[1];
  let ny = tx[2] * ty[0] - tx[0] * ty[2];
  let nz = tx[0] * ty[1] - tx[1] * ty[0];
  const len = Math.hypot(nx, ny, nz);
  if (len < 1e-12) return [0, 0, -1];
  nx /= len;
  ny /= len;
  nz /= len;
  // orient toward the camera
  const view = unproject(depth, width, cam, x, y);
  const dot = nx * view[0] + ny * view[1] + nz * view[2];
  return dot > 0 ? [-nx, -ny, -nz] : [nx, ny, nz];
}
