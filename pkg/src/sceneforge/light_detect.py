"""In-frustum light detection: SLIC superpixels, filter-bank features,
a binary emitter classifier, and 3D quad fitting of detected clusters."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve
from scipy.optimize import minimize

from .assets import QuadLight, SceneModel
from .features import resize_bilinear, rgb_to_lab, rgb_to_ycbcr
from .geometry import unproject_all
from .images import LdrImage, ValidationError

N_FILTERS = 17
N_FEATURES = 341  # height + 17 filters x {energy, kurtosis} x 5 cells x 2 scales


# ---------------------------------------------------------------------------
# SLIC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuperpixelSegmentation:
    labels: np.ndarray  # (h, w) int32, values 0..n-1
    n: int
    centroids: np.ndarray = field(init=False)  # (n, 2) as (cy, cx)
    sizes: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels, dtype=np.int32)
        if lab.min() < 0 or lab.max() >= self.n:
            raise ValidationError("superpixel labels must cover 0..n-1")
        counts = np.bincount(lab.ravel(), minlength=self.n)
        if (counts == 0).any():
            raise ValidationError("superpixel ids must be contiguous (no empties)")
        h, w = lab.shape
        ys, xs = np.mgrid[0:h, 0:w]
        cy = np.bincount(lab.ravel(), weights=ys.ravel(), minlength=self.n) / counts
        cx = np.bincount(lab.ravel(), weights=xs.ravel(), minlength=self.n) / counts
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "centroids", np.stack([cy, cx], axis=1))
        object.__setattr__(self, "sizes", counts)

    def adjacency(self) -> set[tuple[int, int]]:
        """Unordered pairs of superpixels sharing a 4-neighbor pixel edge."""
        lab = self.labels
        pairs: set[tuple[int, int]] = set()
        for a, b in ((lab[:, :-1], lab[:, 1:]), (lab[:-1, :], lab[1:, :])):
            diff = a != b
            pa, pb = a[diff], b[diff]
            lo = np.minimum(pa, pb)
            hi = np.maximum(pa, pb)
            pairs.update(zip(lo.tolist(), hi.tolist()))
        return pairs


def _relabel_connected(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Split disconnected label components, then absorb tiny components into
    their most-contacted neighbor. Deterministic raster-order processing."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int32)
    comp_sizes: list[int] = []
    stack: list[tuple[int, int]] = []
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] >= 0:
                continue
            cid = len(comp_sizes)
            lab_val = labels[sy, sx]
            comp[sy, sx] = cid
            stack.append((sy, sx))
            size = 0
            while stack:
                y, x = stack.pop()
                size += 1
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and comp[ny, nx] < 0 \
                            and labels[ny, nx] == lab_val:
                        comp[ny, nx] = cid
                        stack.append((ny, nx))
            comp_sizes.append(size)

    n_comp = len(comp_sizes)
    # contact counts between components
    contact: dict[tuple[int, int], int] = {}
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = a != b
        for pa, pb in zip(a[diff].tolist(), b[diff].tolist()):
            key = (min(pa, pb), max(pa, pb))
            contact[key] = contact.get(key, 0) + 1

    target = np.arange(n_comp, dtype=np.int32)
    sizes = np.asarray(comp_sizes)
    order = np.argsort(sizes, kind="stable")
    for cid in order:
        if sizes[cid] >= min_size:
            continue
        best, best_contact = -1, -1
        for (a, b), cnt in contact.items():
            other = b if a == cid else (a if b == cid else -1)
            if other < 0:
                continue
            root = other
            while target[root] != root:
                root = target[root]
            if root == cid:
                continue
            if cnt > best_contact or (cnt == best_contact and root < best):
                best, best_contact = root, cnt
        if best >= 0:
            target[cid] = best
            sizes[best] += sizes[cid]

    for cid in range(n_comp):
        root = cid
        while target[root] != root:
            root = target[root]
        target[cid] = root
    merged = target[comp]
    # contiguous ids in raster order of first appearance
    remap: dict[int, int] = {}
    out = np.empty_like(merged)
    flat = merged.ravel()
    out_flat = out.ravel()
    for i, v in enumerate(flat.tolist()):
        if v not in remap:
            remap[v] = len(remap)
        out_flat[i] = remap[v]
    return out


def slic(img: LdrImage, n_segments: int = 400,
         compactness: float = 10.0) -> SuperpixelSegmentation:
    """SLIC superpixels: localized k-means over (Lab, scaled xy), 10
    iterations, followed by connectivity enforcement. Deterministic."""
    h, w = img.height, img.width
    if n_segments < 1:
        raise ValidationError("n_segments must be >= 1")
    if n_segments > h * w:
        raise ValidationError(f"n_segments {n_segments} exceeds pixel count")
    lab = rgb_to_lab(img.data.astype(np.float64) / 255.0)
    step = np.sqrt(h * w / n_segments)
    nx = max(1, int(round(w / step)))
    ny = max(1, int(round(h / step)))

    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    gray = lab[..., 0]
    gx[:, 1:-1] = gray[:, 2:] - gray[:, :-2]
    gy[1:-1, :] = gray[2:, :] - gray[:-2, :]
    gradmag = gx * gx + gy * gy

    centers = []
    for j in range(ny):
        for i in range(nx):
            cx = int((i + 0.5) * w / nx)
            cy = int((j + 0.5) * h / ny)
            cx = min(max(cx, 1), w - 2) if w > 2 else cx
            cy = min(max(cy, 1), h - 2) if h > 2 else cy
            best = (gradmag[cy, cx], cy, cx)
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = cy + dy, cx + dx
                    if 0 <= yy < h and 0 <= xx < w and gradmag[yy, xx] < best[0]:
                        best = (gradmag[yy, xx], yy, xx)
            centers.append([best[1], best[2], lab[best[1], best[2], 0],
                            lab[best[1], best[2], 1], lab[best[1], best[2], 2]])
    c = np.asarray(centers, dtype=np.float64)  # (k, 5): y, x, L, a, b
    k = len(c)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ratio = (compactness / step) ** 2

    labels = np.zeros((h, w), dtype=np.int32)
    for _ in range(10):
        dist = np.full((h, w), np.inf)
        for ci in range(k):
            cyi, cxi = c[ci, 0], c[ci, 1]
            y0, y1 = max(0, int(cyi - step)), min(h, int(cyi + step) + 2)
            x0, x1 = max(0, int(cxi - step)), min(w, int(cxi + step) + 2)
            if y0 >= y1 or x0 >= x1:
                continue
            dl = lab[y0:y1, x0:x1] - c[ci, 2:5]
            dxy = (ys[y0:y1, x0:x1] - cyi) ** 2 + (xs[y0:y1, x0:x1] - cxi) ** 2
            d = (dl * dl).sum(-1) + ratio * dxy
            better = d < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][better] = d[better]
            labels[y0:y1, x0:x1][better] = ci
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        counts[counts == 0] = 1.0
        c[:, 0] = np.bincount(flat, weights=ys.ravel(), minlength=k) / counts
        c[:, 1] = np.bincount(flat, weights=xs.ravel(), minlength=k) / counts
        for j in range(3):
            c[:, 2 + j] = np.bincount(flat, weights=lab[..., j].ravel(),
                                      minlength=k) / counts

    min_size = max(1, (h * w // k) // 4)
    labels = _relabel_connected(labels, min_size)
    return SuperpixelSegmentation(labels=labels, n=int(labels.max()) + 1)


# ---------------------------------------------------------------------------
# Filter bank features
# ---------------------------------------------------------------------------

def _laws_masks() -> list[np.ndarray]:
    l3 = np.array([1.0, 2.0, 1.0])
    e3 = np.array([-1.0, 0.0, 1.0])
    s3 = np.array([-1.0, 2.0, -1.0])
    return [np.outer(a, b) for a in (l3, e3, s3) for b in (l3, e3, s3)]


def _oriented_masks(n: int = 6, size: int = 5, sigma: float = 1.2) -> list[np.ndarray]:
    r = size // 2
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    masks = []
    for i in range(n):
        th = np.pi * i / n
        xr = xs * np.cos(th) + ys * np.sin(th)
        m = xr * np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
        masks.append(m / np.abs(m).sum())
    return masks


def filter_responses(img: LdrImage) -> np.ndarray:
    """(17, h, w) responses: 9 Laws masks on Y, local average on Cb and Cr,
    and 6 oriented edge filters on Y."""
    ycc = rgb_to_ycbcr(img.data.astype(np.float64) / 255.0)
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    laws = _laws_masks()
    out = [convolve(y, m, mode="reflect") for m in laws]
    avg = laws[0] / laws[0].sum()
    out.append(convolve(cb, avg, mode="reflect"))
    out.append(convolve(cr, avg, mode="reflect"))
    out.extend(convolve(y, m, mode="reflect") for m in _oriented_masks())
    return np.stack(out)


def _neighbor_table(seg: SuperpixelSegmentation) -> np.ndarray:
    """(n, 4) neighbor ids in order top, left, bottom, right; -1 if missing.
    Chosen geometrically from centroids, so the table is invariant to
    relabeling."""
    adj: dict[int, list[int]] = {i: [] for i in range(seg.n)}
    for a, b in seg.adjacency():
        adj[a].append(b)
        adj[b].append(a)
    table = np.full((seg.n, 4), -1, dtype=np.int64)
    cents = seg.centroids
    for s in range(seg.n):
        best_d: list[tuple] = [(np.inf, np.inf, np.inf)] * 4
        for t in adj[s]:
            dy = cents[t, 0] - cents[s, 0]
            dx = cents[t, 1] - cents[s, 1]
            if abs(dy) >= abs(dx):
                slot = 0 if dy < 0 else 2
            else:
                slot = 1 if dx < 0 else 3
            d = (dy * dy + dx * dx, cents[t, 0], cents[t, 1])
            if d < best_d[slot]:
                best_d[slot] = d
                table[s, slot] = t
    return table


def _moments_per_superpixel(resp: np.ndarray, labels: np.ndarray,
                            n: int) -> np.ndarray:
    """(n, 34): per-filter mean square (energy) and central fourth moment."""
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    out = np.empty((n, 2 * len(resp)))
    for fi, r in enumerate(resp):
        rv = r.ravel()
        mean = np.bincount(flat, weights=rv, minlength=n) / safe
        energy = np.bincount(flat, weights=rv * rv, minlength=n) / safe
        centered4 = np.bincount(flat, weights=(rv - mean[flat]) ** 4,
                                minlength=n) / safe
        out[:, 2 * fi] = energy
        out[:, 2 * fi + 1] = centered4
    return out


def _scale_features(img: LdrImage, seg: SuperpixelSegmentation,
                    scale: float) -> np.ndarray:
    """(n, 170) per-superpixel features at one scale: own 34 + 4 neighbors."""
    if scale == 1.0:
        data = img.data
        labels = seg.labels
    else:
        hh = max(1, int(round(img.height * scale)))
        ww = max(1, int(round(img.width * scale)))
        data = np.floor(resize_bilinear(img.data.astype(np.float64), ww, hh)
                        + 0.5).astype(np.uint8)
        sy = (np.arange(hh) / scale).astype(int).clip(0, img.height - 1)
        sx = (np.arange(ww) / scale).astype(int).clip(0, img.width - 1)
        labels = seg.labels[sy[:, None], sx[None, :]]
    resp = filter_responses(LdrImage(np.ascontiguousarray(data)))
    present = np.bincount(labels.ravel(), minlength=seg.n) > 0
    own = _moments_per_superpixel(resp, labels, seg.n)
    own[~present] = 0.0
    table = _neighbor_table(seg)
    blocks = [own]
    for slot in range(4):
        nb = table[:, slot]
        block = np.where((nb >= 0)[:, None], own[np.maximum(nb, 0)], 0.0)
        blocks.append(block)
    return np.concatenate(blocks, axis=1)


def features_all(img: LdrImage, seg: SuperpixelSegmentation) -> np.ndarray:
    """(n, 341) feature matrix: normalized centroid height plus the filter
    moment blocks at full and half scale."""
    height_feat = 1.0 - seg.centroids[:, 0] / max(img.height - 1, 1)
    full = _scale_features(img, seg, 1.0)
    half = _scale_features(img, seg, 0.5)
    feats = np.concatenate([height_feat[:, None], full, half], axis=1)
    if feats.shape[1] != N_FEATURES:
        raise AssertionError(f"feature width {feats.shape[1]} != {N_FEATURES}")
    return feats


def light_features(img: LdrImage, seg: SuperpixelSegmentation,
                   superpixel_id: int) -> np.ndarray:
    """341-vector for one superpixel (batch callers should use features_all)."""
    if not 0 <= superpixel_id < seg.n:
        raise IndexError(f"superpixel {superpixel_id} out of range")
    return features_all(img, seg)[superpixel_id]


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LightClassifier:
    weights: np.ndarray  # (341,)
    bias: float
    feat_mean: np.ndarray
    feat_std: np.ndarray
    regularization: float = 1.0
    seed: int = 0

    def scores(self, feats: np.ndarray) -> np.ndarray:
        z = (feats - self.feat_mean) / self.feat_std
        return z @ self.weights + self.bias

    def predict_proba(self, feats: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.scores(feats)))

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias,
                "feat_mean": self.feat_mean.tolist(),
                "feat_std": self.feat_std.tolist(),
                "regularization": self.regularization, "seed": self.seed}

    @classmethod
    def from_json(cls, doc: dict) -> "LightClassifier":
        return cls(weights=np.asarray(doc["weights"]), bias=float(doc["bias"]),
                   feat_mean=np.asarray(doc["feat_mean"]),
                   feat_std=np.asarray(doc["feat_std"]),
                   regularization=float(doc.get("regularization", 1.0)),
                   seed=int(doc.get("seed", 0)))

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path: str) -> "LightClassifier":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def train_light_classifier(samples: list[tuple[np.ndarray, bool]],
                           regularization: float = 1.0,
                           seed: int = 0) -> LightClassifier:
    """L2-regularized logistic regression on standardized features,
    optimized until the gradient norm drops below 1e-6."""
    if not samples:
        raise ValidationError("no training samples")
    x = np.asarray([s[0] for s in samples], dtype=np.float64)
    y = np.asarray([1.0 if s[1] else -1.0 for s in samples])
    if len(np.unique(y)) < 2:
        raise ValidationError("training data must contain both classes")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-12] = 1.0
    z = (x - mean) / std
    n, d = z.shape

    def fun(theta: np.ndarray) -> tuple[float, np.ndarray]:
        w, b = theta[:d], theta[d]
        margin = y * (z @ w + b)
        # stable log(1 + exp(-m))
        loss = np.logaddexp(0.0, -margin).sum() + regularization * w @ w
        s = -y / (1.0 + np.exp(margin))
        grad = np.empty(d + 1)
        grad[:d] = z.T @ s + 2.0 * regularization * w
        grad[d] = s.sum()
        return float(loss), grad

    res = minimize(fun, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": 5000, "gtol": 1e-6, "ftol": 1e-16})
    return LightClassifier(weights=res.x[:d], bias=float(res.x[d]),
                           feat_mean=mean, feat_std=std,
                           regularization=regularization, seed=seed)


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectedQuadLight:
    vertices: np.ndarray           # (4, 3) coplanar, perimeter order
    superpixel_ids: tuple[int, ...]
    intensity: np.ndarray = field(default_factory=lambda: np.ones(3))

    def as_light(self) -> QuadLight:
        return QuadLight(vertices=self.vertices, intensity=self.intensity)


def _clusters(hot: np.ndarray, seg: SuperpixelSegmentation) -> list[list[int]]:
    adj: dict[int, list[int]] = {i: [] for i in range(seg.n)}
    for a, b in seg.adjacency():
        adj[a].append(b)
        adj[b].append(a)
    seen = set()
    clusters = []
    for s in range(seg.n):
        if not hot[s] or s in seen:
            continue
        group = [s]
        seen.add(s)
        queue = [s]
        while queue:
            cur = queue.pop()
            for t in sorted(adj[cur]):
                if hot[t] and t not in seen:
                    seen.add(t)
                    group.append(t)
                    queue.append(t)
        clusters.append(sorted(group))
    return clusters


def fit_quad(points: np.ndarray) -> np.ndarray:
    """Bounding rectangle of 3D points in their least-variance plane.

    The plane normal is the smallest-eigenvalue direction of the point
    covariance; corners come from the extents along the two remaining
    principal directions, in perimeter order."""
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / len(points)
    evals, evecs = np.linalg.eigh(cov)
    u, v = evecs[:, 2], evecs[:, 1]  # in-plane, descending variance
    a = centered @ u
    b = centered @ v
    pad = 1e-9 * max(1.0, float(np.linalg.norm(mean)))
    a0, a1 = a.min() - pad, a.max() + pad
    b0, b1 = b.min() - pad, b.max() + pad
    return np.stack([mean + a0 * u + b0 * v, mean + a1 * u + b0 * v,
                     mean + a1 * u + b1 * v, mean + a0 * u + b1 * v])


def detect_lights(img: LdrImage, scene: SceneModel, clf: LightClassifier,
                  threshold: float = 0.5, n_segments: int = 400,
                  compactness: float = 10.0,
                  seg: SuperpixelSegmentation | None = None
                  ) -> list[DetectedQuadLight]:
    """Classify superpixels, cluster the emitting ones by adjacency, and fit
    a 3D quad to each cluster using the scene's depth and camera."""
    if seg is None:
        seg = slic(img, n_segments=n_segments, compactness=compactness)
    feats = features_all(img, seg)
    probs = clf.predict_proba(feats)
    hot = probs > threshold
    if not hot.any():
        return []
    pts3d = unproject_all(scene.depth, scene.camera)
    out = []
    for group in _clusters(hot, seg):
        mask = np.isin(seg.labels, group)
        pts = pts3d[mask]
        if len(pts) < 3:
            continue
        quad = fit_quad(pts.reshape(-1, 3))
        if np.linalg.norm(np.cross(quad[1] - quad[0], quad[3] - quad[0])) < 1e-12:
            continue
        out.append(DetectedQuadLight(vertices=quad,
                                     superpixel_ids=tuple(group)))
    return out


def probability_map(img: LdrImage, clf: LightClassifier,
                    seg: SuperpixelSegmentation | None = None,
                    n_segments: int = 400) -> np.ndarray:
    """Per-pixel emitter probability (each pixel takes its superpixel's)."""
    if seg is None:
        seg = slic(img, n_segments=n_segments)
    probs = clf.predict_proba(features_all(img, seg))
    return probs[seg.labels]
