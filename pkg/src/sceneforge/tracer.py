"""Numba path-tracing kernels.

One wavefront per pixel sample, next-event estimation toward every light at
every bounce, per-light radiance accumulation (basis images fall out of a
single pass), counter-based RNG so output is bitwise deterministic for a
given (seed, resolution, spp) regardless of thread count.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

from .rng import rand3

MAX_LIGHTS = 19
_SLOTS_PER_BOUNCE = 64
_MAX_BOUNCE_CAP = 32
SLOTS_PER_SAMPLE = 4 + _MAX_BOUNCE_CAP * _SLOTS_PER_BOUNCE
KIND_QUAD = 0
KIND_IBL = 1
_T_FAR = 1e30


# ---------------------------------------------------------------------------
# BVH construction (host side)
# ---------------------------------------------------------------------------

def build_bvh(v0: np.ndarray, e1: np.ndarray, e2: np.ndarray, leaf_size: int = 4):
    """Median-split BVH over triangles. Returns
    (node_min, node_max, node_left, node_right, node_start, node_count, order).
    Internal nodes have count == 0; leaves index order[start:start+count]."""
    n = len(v0)
    if n == 0:
        z3 = np.zeros((0, 3))
        zi = np.zeros(0, dtype=np.int32)
        return z3, z3, zi, zi, zi, zi, zi
    p1 = v0 + e1
    p2 = v0 + e2
    tmin = np.minimum(np.minimum(v0, p1), p2)
    tmax = np.maximum(np.maximum(v0, p1), p2)
    cent = 0.5 * (tmin + tmax)

    order = np.arange(n, dtype=np.int64)
    nmin, nmax = [], []
    left, right, start, count = [], [], [], []

    def new_node():
        nmin.append(None)
        nmax.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(nmin) - 1

    def build(lo: int, hi: int) -> int:
        idx = new_node()
        sel = order[lo:hi]
        nmin[idx] = tmin[sel].min(axis=0)
        nmax[idx] = tmax[sel].max(axis=0)
        if hi - lo <= leaf_size:
            start[idx] = lo
            count[idx] = hi - lo
            return idx
        ext = cent[sel].max(axis=0) - cent[sel].min(axis=0)
        axis = int(np.argmax(ext))
        key = cent[sel, axis]
        order[lo:hi] = sel[np.argsort(key, kind="stable")]
        mid = (lo + hi) // 2
        left[idx] = build(lo, mid)
        right[idx] = build(mid, hi)
        return idx

    import sys
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10000))
    try:
        build(0, n)
    finally:
        sys.setrecursionlimit(old_limit)
    return (np.asarray(nmin), np.asarray(nmax),
            np.asarray(left, dtype=np.int32), np.asarray(right, dtype=np.int32),
            np.asarray(start, dtype=np.int32), np.asarray(count, dtype=np.int32),
            order.astype(np.int32))


# ---------------------------------------------------------------------------
# Device helpers
# ---------------------------------------------------------------------------

@njit(inline="always")
def _safe_inv(x):
    if abs(x) < 1e-12:
        return 1e12 if x >= 0 else -1e12
    return 1.0 / x


@njit(inline="always")
def _aabb_hit(ox, oy, oz, ix, iy, iz, t1, bminx, bminy, bminz, bmaxx, bmaxy, bmaxz):
    tx1 = (bminx - ox) * ix
    tx2 = (bmaxx - ox) * ix
    tlo = min(tx1, tx2)
    thi = max(tx1, tx2)
    ty1 = (bminy - oy) * iy
    ty2 = (bmaxy - oy) * iy
    tlo = max(tlo, min(ty1, ty2))
    thi = min(thi, max(ty1, ty2))
    tz1 = (bminz - oz) * iz
    tz2 = (bmaxz - oz) * iz
    tlo = max(tlo, min(tz1, tz2))
    thi = min(thi, max(tz1, tz2))
    return thi >= tlo and thi >= 0.0 and tlo <= t1


@njit(inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri):
    """Moller-Trumbore; returns t or -1."""
    e1x, e1y, e1z = e1[tri, 0], e1[tri, 1], e1[tri, 2]
    e2x, e2y, e2z = e2[tri, 0], e2[tri, 1], e2[tri, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return -1.0
    inv = 1.0 / det
    sx = ox - v0[tri, 0]
    sy = oy - v0[tri, 1]
    sz = oz - v0[tri, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -1e-9 or u > 1.0 + 1e-9:
        return -1.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -1e-9 or u + v > 1.0 + 1e-9:
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= 1e-9:
        return -1.0
    return t


@njit(inline="always")
def _trace(ox, oy, oz, dx, dy, dz, t_max, skip_tri,
           nmin, nmax, nleft, nright, nstart, ncount, order, v0, e1, e2):
    """Closest hit. Returns (t, tri) with tri == -1 on miss."""
    best_t = t_max
    best_tri = -1
    if nmin.shape[0] == 0:
        return best_t, best_tri
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    stack = np.empty(64, dtype=np.int32)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _aabb_hit(ox, oy, oz, ix, iy, iz, best_t,
                         nmin[node, 0], nmin[node, 1], nmin[node, 2],
                         nmax[node, 0], nmax[node, 1], nmax[node, 2]):
            continue
        cnt = ncount[node]
        if cnt > 0:
            s = nstart[node]
            for i in range(cnt):
                tri = order[s + i]
                if tri == skip_tri:
                    continue
                t = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri)
                if 0.0 < t < best_t:
                    best_t = t
                    best_tri = tri
        else:
            stack[sp] = nleft[node]
            sp += 1
            stack[sp] = nright[node]
            sp += 1
    return best_t, best_tri


@njit(inline="always")
def _occluded(ox, oy, oz, dx, dy, dz, t_max, skip_a, skip_b,
              nmin, nmax, nleft, nright, nstart, ncount, order, v0, e1, e2):
    if nmin.shape[0] == 0:
        return False
    ix = _safe_inv(dx)
    iy = _safe_inv(dy)
    iz = _safe_inv(dz)
    stack = np.empty(64, dtype=np.int32)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _aabb_hit(ox, oy, oz, ix, iy, iz, t_max,
                         nmin[node, 0], nmin[node, 1], nmin[node, 2],
                         nmax[node, 0], nmax[node, 1], nmax[node, 2]):
            continue
        cnt = ncount[node]
        if cnt > 0:
            s = nstart[node]
            for i in range(cnt):
                tri = order[s + i]
                if tri == skip_a or tri == skip_b:
                    continue
                t = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri)
                if 0.0 < t < t_max:
                    return True
        else:
            stack[sp] = nleft[node]
            sp += 1
            stack[sp] = nright[node]
            sp += 1
    return False


@njit(inline="always")
def _search_cdf(cdf, lo, hi, u):
    """First index i in [lo, hi) with cdf[i] >= u."""
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] < u:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(inline="always")
def _pano_dir(phi, sin_theta):
    cos_theta = np.sqrt(max(0.0, 1.0 - sin_theta * sin_theta))
    return cos_theta * np.sin(phi), -sin_theta, cos_theta * np.cos(phi)


@njit(inline="always")
def _pano_pixel(lx, ly, lz, w, h):
    """Nearest pixel of a local direction under the equirectangular mapping."""
    st = min(1.0, max(-1.0, -ly))
    theta = np.arcsin(st)
    phi = np.arctan2(lx, lz)
    col = int((phi + np.pi) * (0.5 / np.pi) * w)
    if col >= w:
        col = w - 1
    if col < 0:
        col = 0
    row = int((0.5 * np.pi - theta) / np.pi * h)
    if row >= h:
        row = h - 1
    if row < 0:
        row = 0
    return row, col


# ---------------------------------------------------------------------------
# Main kernels
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def render_kernel(width, height, f, cx, cy,
                  v0, e1, e2, alb, emit_light, emit_rgb,
                  nmin, nmax, nleft, nright, nstart, ncount, order,
                  light_kind,
                  grp_start, grp_tri, grp_cum, grp_area,
                  ibl_off, ibl_w, ibl_h, ibl_pix, ibl_cdf, ibl_pdf, ibl_rot,
                  spp, max_bounces, rr_start, seed, eps_o,
                  out_sum, out_sumsq, want_var):
    n_lights = light_kind.shape[0]
    for py in prange(height):
        for px in range(width):
            pixel = np.uint64(py * width + px)
            for s in range(spp):
                base = s * SLOTS_PER_SAMPLE
                contrib = np.zeros((n_lights, 3))
                ju = rand3(seed, pixel, np.uint64(base))
                jv = rand3(seed, pixel, np.uint64(base + 1))
                dx = (px + ju - cx) / f
                dy = (py + jv - cy) / f
                dz = 1.0
                dn = np.sqrt(dx * dx + dy * dy + dz * dz)
                dx /= dn
                dy /= dn
                dz /= dn
                ox = 0.0
                oy = 0.0
                oz = 0.0
                tr = 1.0
                tg = 1.0
                tb = 1.0
                cur = -1
                for b in range(max_bounces):
                    bslot = base + 4 + b * _SLOTS_PER_BOUNCE
                    t, tri = _trace(ox, oy, oz, dx, dy, dz, _T_FAR, cur,
                                    nmin, nmax, nleft, nright, nstart, ncount,
                                    order, v0, e1, e2)
                    if tri < 0:
                        if b == 0:
                            for k in range(n_lights):
                                if light_kind[k] == KIND_IBL:
                                    lx = (ibl_rot[k, 0, 0] * dx + ibl_rot[k, 1, 0] * dy
                                          + ibl_rot[k, 2, 0] * dz)
                                    ly = (ibl_rot[k, 0, 1] * dx + ibl_rot[k, 1, 1] * dy
                                          + ibl_rot[k, 2, 1] * dz)
                                    lz = (ibl_rot[k, 0, 2] * dx + ibl_rot[k, 1, 2] * dy
                                          + ibl_rot[k, 2, 2] * dz)
                                    row, col = _pano_pixel(lx, ly, lz,
                                                           ibl_w[k], ibl_h[k])
                                    j = ibl_off[k] + row * ibl_w[k] + col
                                    contrib[k, 0] += ibl_pix[j, 0]
                                    contrib[k, 1] += ibl_pix[j, 1]
                                    contrib[k, 2] += ibl_pix[j, 2]
                        break
                    if b == 0 and emit_light[tri] >= 0:
                        k = emit_light[tri]
                        contrib[k, 0] += tr * emit_rgb[tri, 0]
                        contrib[k, 1] += tg * emit_rgb[tri, 1]
                        contrib[k, 2] += tb * emit_rgb[tri, 2]
                    hx = ox + t * dx
                    hy = oy + t * dy
                    hz = oz + t * dz
                    gx = e1[tri, 1] * e2[tri, 2] - e1[tri, 2] * e2[tri, 1]
                    gy = e1[tri, 2] * e2[tri, 0] - e1[tri, 0] * e2[tri, 2]
                    gz = e1[tri, 0] * e2[tri, 1] - e1[tri, 1] * e2[tri, 0]
                    gn = np.sqrt(gx * gx + gy * gy + gz * gz)
                    if gn < 1e-30:
                        break
                    gx /= gn
                    gy /= gn
                    gz /= gn
                    if gx * dx + gy * dy + gz * dz > 0.0:
                        gx = -gx
                        gy = -gy
                        gz = -gz
                    ar = alb[tri, 0]
                    ag = alb[tri, 1]
                    ab = alb[tri, 2]
                    sx = hx + gx * eps_o
                    sy = hy + gy * eps_o
                    sz = hz + gz * eps_o
                    if ar > 0.0 or ag > 0.0 or ab > 0.0:
                        # one shared slot triple per bounce: light order cannot
                        # change any basis image (permutation equivariance)
                        u1 = rand3(seed, pixel, np.uint64(bslot + 4))
                        u2 = rand3(seed, pixel, np.uint64(bslot + 5))
                        u3 = rand3(seed, pixel, np.uint64(bslot + 6))
                        for k in range(n_lights):
                            if light_kind[k] == KIND_QUAD:
                                j = _search_cdf(grp_cum, grp_start[k],
                                                grp_start[k + 1], u1)
                                if j >= grp_start[k + 1]:
                                    j = grp_start[k + 1] - 1
                                ltri = grp_tri[j]
                                r1 = np.sqrt(u2)
                                bu = 1.0 - r1
                                bv = u3 * r1
                                qx = (v0[ltri, 0] + bu * e1[ltri, 0]
                                      + bv * e2[ltri, 0])
                                qy = (v0[ltri, 1] + bu * e1[ltri, 1]
                                      + bv * e2[ltri, 1])
                                qz = (v0[ltri, 2] + bu * e1[ltri, 2]
                                      + bv * e2[ltri, 2])
                                wx = qx - sx
                                wy = qy - sy
                                wz = qz - sz
                                r2 = wx * wx + wy * wy + wz * wz
                                if r2 < 1e-24:
                                    continue
                                r = np.sqrt(r2)
                                wx /= r
                                wy /= r
                                wz /= r
                                cos_s = gx * wx + gy * wy + gz * wz
                                if cos_s <= 0.0:
                                    continue
                                lnx = (e1[ltri, 1] * e2[ltri, 2]
                                       - e1[ltri, 2] * e2[ltri, 1])
                                lny = (e1[ltri, 2] * e2[ltri, 0]
                                       - e1[ltri, 0] * e2[ltri, 2])
                                lnz = (e1[ltri, 0] * e2[ltri, 1]
                                       - e1[ltri, 1] * e2[ltri, 0])
                                lnn = np.sqrt(lnx * lnx + lny * lny + lnz * lnz)
                                if lnn < 1e-30:
                                    continue
                                cos_l = abs(lnx * wx + lny * wy + lnz * wz) / lnn
                                if cos_l <= 0.0:
                                    continue
                                if _occluded(sx, sy, sz, wx, wy, wz,
                                             r * (1.0 - 1e-4), tri, ltri,
                                             nmin, nmax, nleft, nright, nstart,
                                             ncount, order, v0, e1, e2):
                                    continue
                                geom = cos_s * cos_l / r2 * grp_area[k] / np.pi
                                contrib[k, 0] += tr * ar * emit_rgb[ltri, 0] * geom
                                contrib[k, 1] += tg * ag * emit_rgb[ltri, 1] * geom
                                contrib[k, 2] += tb * ab * emit_rgb[ltri, 2] * geom
                            else:
                                off = ibl_off[k]
                                wpx = ibl_w[k]
                                hpx = ibl_h[k]
                                j = _search_cdf(ibl_cdf, off, off + wpx * hpx, u1)
                                if j >= off + wpx * hpx:
                                    j = off + wpx * hpx - 1
                                pdf = ibl_pdf[j]
                                if pdf <= 0.0:
                                    continue
                                rowp = (j - off) // wpx
                                colp = (j - off) % wpx
                                phi0 = 2.0 * np.pi * colp / wpx - np.pi
                                dphi = 2.0 * np.pi / wpx
                                st_top = np.sin(0.5 * np.pi - np.pi * rowp / hpx)
                                st_bot = np.sin(0.5 * np.pi - np.pi * (rowp + 1) / hpx)
                                phi = phi0 + u2 * dphi
                                st = st_bot + u3 * (st_top - st_bot)
                                lx, ly, lz = _pano_dir(phi, st)
                                wx = (ibl_rot[k, 0, 0] * lx + ibl_rot[k, 0, 1] * ly
                                      + ibl_rot[k, 0, 2] * lz)
                                wy = (ibl_rot[k, 1, 0] * lx + ibl_rot[k, 1, 1] * ly
                                      + ibl_rot[k, 1, 2] * lz)
                                wz = (ibl_rot[k, 2, 0] * lx + ibl_rot[k, 2, 1] * ly
                                      + ibl_rot[k, 2, 2] * lz)
                                cos_s = gx * wx + gy * wy + gz * wz
                                if cos_s <= 0.0:
                                    continue
                                if _occluded(sx, sy, sz, wx, wy, wz, _T_FAR,
                                             tri, -1,
                                             nmin, nmax, nleft, nright, nstart,
                                             ncount, order, v0, e1, e2):
                                    continue
                                w_pdf = cos_s / pdf / np.pi
                                contrib[k, 0] += tr * ar * ibl_pix[j, 0] * w_pdf
                                contrib[k, 1] += tg * ag * ibl_pix[j, 1] * w_pdf
                                contrib[k, 2] += tb * ab * ibl_pix[j, 2] * w_pdf
                    # continuation
                    ntr = tr * ar
                    ntg = tg * ag
                    ntb = tb * ab
                    tmax_c = max(ntr, max(ntg, ntb))
                    if tmax_c <= 0.0:
                        break
                    if b >= rr_start:
                        p_cont = min(0.95, max(0.05, tmax_c))
                        if rand3(seed, pixel, np.uint64(bslot + 2)) >= p_cont:
                            break
                        ntr /= p_cont
                        ntg /= p_cont
                        ntb /= p_cont
                    u1 = rand3(seed, pixel, np.uint64(bslot))
                    u2 = rand3(seed, pixel, np.uint64(bslot + 1))
                    if abs(gx) > 0.9:
                        tx_, ty_, tz_ = 0.0, 1.0, 0.0
                    else:
                        tx_, ty_, tz_ = 1.0, 0.0, 0.0
                    # tangent = normalize(t - (t.n)n), bitangent = n x tangent
                    dot_tn = tx_ * gx + ty_ * gy + tz_ * gz
                    tx_ -= dot_tn * gx
                    ty_ -= dot_tn * gy
                    tz_ -= dot_tn * gz
                    tn = np.sqrt(tx_ * tx_ + ty_ * ty_ + tz_ * tz_)
                    tx_ /= tn
                    ty_ /= tn
                    tz_ /= tn
                    bx = gy * tz_ - gz * ty_
                    by = gz * tx_ - gx * tz_
                    bz = gx * ty_ - gy * tx_
                    rad = np.sqrt(u1)
                    ang = 2.0 * np.pi * u2
                    lx = rad * np.cos(ang)
                    ly = rad * np.sin(ang)
                    lz = np.sqrt(max(0.0, 1.0 - u1))
                    dx = lx * tx_ + ly * bx + lz * gx
                    dy = lx * ty_ + ly * by + lz * gy
                    dz = lx * tz_ + ly * bz + lz * gz
                    ox = sx
                    oy = sy
                    oz = sz
                    tr = ntr
                    tg = ntg
                    tb = ntb
                    cur = tri
                for k in range(n_lights):
                    for c in range(3):
                        out_sum[k, py, px, c] += contrib[k, c]
                        if want_var:
                            out_sumsq[k, py, px, c] += contrib[k, c] * contrib[k, c]


@njit(parallel=True, cache=True)
def mask_kernel(width, height, f, cx, cy,
                v0, e1, e2, is_obj,
                nmin, nmax, nleft, nright, nstart, ncount, order,
                spp, seed, out):
    for py in prange(height):
        for px in range(width):
            pixel = np.uint64(py * width + px)
            hits = 0
            for s in range(spp):
                base = s * SLOTS_PER_SAMPLE
                ju = rand3(seed, pixel, np.uint64(base))
                jv = rand3(seed, pixel, np.uint64(base + 1))
                dx = (px + ju - cx) / f
                dy = (py + jv - cy) / f
                dz = 1.0
                dn = np.sqrt(dx * dx + dy * dy + dz * dz)
                t, tri = _trace(0.0, 0.0, 0.0, dx / dn, dy / dn, dz / dn,
                                _T_FAR, -1,
                                nmin, nmax, nleft, nright, nstart, ncount,
                                order, v0, e1, e2)
                if tri >= 0 and is_obj[tri] != 0:
                    hits += 1
            out[py, px] = hits / spp
