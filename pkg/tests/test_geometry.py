import numpy as np
import pytest

from conftest import draw_wireframe, manhattan_line_field, rotation_ypr
from sceneforge.geometry import (DegenerateGeometry, DepthMap,
                                 InsufficientStructure, PinholeCamera,
                                 VanishingPoints, camera_from_vps,
                                 detect_line_segments, detect_vanishing_points,
                                 fallback_camera, normals_from_depth, project,
                                 triangulate, unproject, unproject_all)
from sceneforge.images import LdrImage, ValidationError


def _vp_rows_from_camera(f, cx, cy, rotation):
    rows = []
    for i in range(3):
        d = rotation[:, i]
        if abs(d[2]) < 1e-12:
            rows.append([d[0], d[1], 0.0])
        else:
            rows.append([f * d[0] / d[2] + cx, f * d[1] / d[2] + cy, 1.0])
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# Camera types
# ---------------------------------------------------------------------------

def test_camera_validation():
    with pytest.raises(ValidationError):
        PinholeCamera(f=-1.0, c0=(0, 0), rotation=np.eye(3))
    with pytest.raises(ValidationError):
        PinholeCamera(f=1.0, c0=(0, 0), rotation=np.ones((3, 3)))
    refl = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValidationError):
        PinholeCamera(f=1.0, c0=(0, 0), rotation=refl)


def test_depth_map_validation():
    with pytest.raises(ValidationError):
        DepthMap(np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        DepthMap(np.full((4, 4), np.inf))


# ---------------------------------------------------------------------------
# Unprojection
# ---------------------------------------------------------------------------

def test_unproject_principal_point():
    cam = PinholeCamera(f=50.0, c0=(10.0, 7.0), rotation=np.eye(3))
    depth = DepthMap(np.full((16, 21), 3.5))
    assert np.allclose(unproject(depth, cam, 10, 7), [0, 0, 3.5])


def test_unproject_hand_evaluated():
    # x = cx + f, y = cy, depth 2 -> (2, 0, 2)
    cam = PinholeCamera(f=4.0, c0=(1.0, 2.0), rotation=np.eye(3))
    depth = DepthMap(np.full((8, 8), 2.0))
    assert np.allclose(unproject(depth, cam, 5, 2), [2.0, 0.0, 2.0])


def test_unproject_out_of_bounds():
    cam = fallback_camera(8, 8)
    depth = DepthMap(np.ones((8, 8)))
    with pytest.raises(IndexError):
        unproject(depth, cam, 8, 0)


def test_project_unproject_roundtrip(rng):
    cam = PinholeCamera(f=123.0, c0=(31.2, 24.9), rotation=np.eye(3))
    depth = DepthMap(rng.uniform(0.5, 9.0, (48, 64)))
    pts = unproject_all(depth, cam)
    px = project(cam, pts)
    xs, ys = np.meshgrid(np.arange(64), np.arange(48))
    assert np.abs(px[..., 0] - xs).max() < 1e-9 * 64
    assert np.abs(px[..., 1] - ys).max() < 1e-9 * 48


# ---------------------------------------------------------------------------
# Normals
# ---------------------------------------------------------------------------

def test_normals_fronto_parallel():
    cam = fallback_camera(32, 24)
    n, degenerate = normals_from_depth(DepthMap(np.full((24, 32), 2.0)), cam)
    assert not degenerate.any()
    assert np.abs(n - np.array([0, 0, -1.0])).max() < 1e-12


def test_normals_ground_plane_analytic():
    # camera principal point above the image so every ray looks down
    cam = PinholeCamera(f=60.0, c0=(31.5, -8.0), rotation=np.eye(3))
    h, w = 48, 64
    ry = (np.arange(h) - cam.c0[1]) / cam.f
    depth = np.broadcast_to(1.0 / ry[:, None], (h, w)).copy()  # plane y = 1
    n, _ = normals_from_depth(DepthMap(depth), cam)
    interior = n[2:-2, 2:-2]
    cos = np.abs(interior @ np.array([0, -1.0, 0]))
    assert np.rad2deg(np.arccos(np.clip(cos, -1, 1))).max() < 0.5


def test_normals_scale_invariance():
    cam = PinholeCamera(f=60.0, c0=(31.5, -8.0), rotation=np.eye(3))
    h, w = 32, 48
    ry = (np.arange(h) - cam.c0[1]) / cam.f
    depth = np.broadcast_to(1.0 / ry[:, None], (h, w)).copy()
    n1, _ = normals_from_depth(DepthMap(depth), cam)
    n2, _ = normals_from_depth(DepthMap(2.0 * depth), cam)
    assert np.abs(n1 - n2).max() < 1e-12


def test_normals_unit_and_flip():
    rng = np.random.default_rng(3)
    cam = fallback_camera(40, 30)
    depth = np.exp(rng.normal(1.0, 0.05, (30, 40)))
    n, _ = normals_from_depth(DepthMap(depth), cam)
    assert np.abs(np.linalg.norm(n, axis=-1) - 1).max() < 1e-6
    # mirrored depth with mirrored camera flips normal x exactly
    cam_m = PinholeCamera(f=cam.f, c0=(39 - cam.c0[0], cam.c0[1]),
                          rotation=np.eye(3))
    nm, _ = normals_from_depth(DepthMap(depth[:, ::-1].copy()), cam_m)
    assert np.abs(nm[:, ::-1, 0] + n[..., 0]).max() < 1e-9
    assert np.abs(nm[:, ::-1, 1] - n[..., 1]).max() < 1e-9


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------

def test_triangulate_constant_quad():
    cam = fallback_camera(2, 2)
    mesh = triangulate(DepthMap(np.full((2, 2), 1.5)), cam)
    assert len(mesh.triangles) == 2
    assert len(mesh.vertices) == 4
    n1 = np.cross(mesh.vertices[mesh.triangles[0][1]] - mesh.vertices[mesh.triangles[0][0]],
                  mesh.vertices[mesh.triangles[0][2]] - mesh.vertices[mesh.triangles[0][0]])
    n2 = np.cross(mesh.vertices[mesh.triangles[1][1]] - mesh.vertices[mesh.triangles[1][0]],
                  mesh.vertices[mesh.triangles[1][2]] - mesh.vertices[mesh.triangles[1][0]])
    assert np.abs(np.cross(n1, n2)).max() < 1e-12  # coplanar


def test_triangulate_vertex_count():
    cam = fallback_camera(13, 9)
    mesh = triangulate(DepthMap(np.full((9, 13), 2.0)), cam)
    assert len(mesh.vertices) == 13 * 9
    assert len(mesh.triangles) == 2 * 12 * 8


def test_triangulate_respects_step_edge():
    cam = fallback_camera(16, 12, f_factor=1.0)
    depth = np.full((12, 16), 2.0)
    depth[:, 8:] = 4.0  # ratio 2 > 1.25 across the step
    mesh = triangulate(DepthMap(depth), cam)
    v = mesh.vertices
    edges = np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                            mesh.triangles[:, [0, 2]]])
    lengths = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)
    # pixel pitch is depth/f; nothing may bridge the 2-unit jump
    assert lengths.max() < 1.0


# ---------------------------------------------------------------------------
# Vanishing points and camera recovery
# ---------------------------------------------------------------------------

def test_line_segment_detector_finds_grid():
    rot = rotation_ypr(np.deg2rad(25), np.deg2rad(15), 0.0)
    img = draw_wireframe(manhattan_line_field(rot), f=500, width=640,
                         height=480)
    segments = detect_line_segments(img)
    assert len(segments) >= 20


def test_detect_vps_on_wireframe_cube():
    rot = rotation_ypr(np.deg2rad(30), np.deg2rad(18), np.deg2rad(4))
    f_true = 500.0
    img = draw_wireframe(manhattan_line_field(rot), f=f_true, width=640,
                         height=480)
    vps = detect_vanishing_points(img, seed=0)
    cam = camera_from_vps(vps, 640, 480)
    # recovered axis directions within 1 degree of the true rotation columns
    got = cam.rotation
    for i in range(3):
        cosangles = np.abs(got.T @ rot[:, i])
        assert np.rad2deg(np.arccos(np.clip(cosangles.max(), -1, 1))) < 1.0
    assert abs(cam.f - f_true) / f_true < 0.01


def test_detect_vps_insufficient_on_stripes():
    img = np.full((480, 640, 3), 255, dtype=np.uint8)
    img[::20, :] = 0  # horizontal stripes only
    with pytest.raises(InsufficientStructure):
        detect_vanishing_points(LdrImage(img), seed=0)


def test_detect_vps_corridor_analytic_projection():
    rot = rotation_ypr(np.deg2rad(20), np.deg2rad(8), 0.0)
    f_true = 400.0
    img = draw_wireframe(manhattan_line_field(rot, center=(0, 0, 8),
                                              extent=2.0, n_per_axis=5),
                         f=f_true, width=640, height=480)
    vps = detect_vanishing_points(img, seed=1)
    cx, cy = (640 - 1) / 2.0, (480 - 1) / 2.0
    truth = _vp_rows_from_camera(f_true, cx, cy, rot)
    for row in truth:
        if row[2] == 0:
            continue
        dists = []
        for got in vps.vp:
            if got[2] == 0:
                continue
            dists.append(np.hypot(got[0] / got[2] - row[0],
                                  got[1] / got[2] - row[1]))
        assert min(dists) < 0.02 * np.hypot(row[0] - cx, row[1] - cy) + 5.0


def test_camera_from_vps_forward_oracle():
    f_true, cx, cy = 800.0, 319.5, 239.5
    rot = rotation_ypr(np.deg2rad(35), np.deg2rad(22), np.deg2rad(3))
    vps = VanishingPoints(_vp_rows_from_camera(f_true, cx, cy, rot))
    cam = camera_from_vps(vps, 640, 480)
    assert abs(cam.f - f_true) / f_true < 0.01
    for i in range(3):
        assert np.abs(np.abs(cam.rotation[:, i] @ rot[:, i]) - 1) < 1e-6


def test_camera_from_vps_infinity_axis():
    # pitch-only rotation keeps the x axis parallel to the image plane
    rot = rotation_ypr(0.0, np.deg2rad(30), 0.0)
    vps = VanishingPoints(_vp_rows_from_camera(500.0, 319.5, 239.5, rot))
    cam = camera_from_vps(vps, 640, 480)
    cols = np.abs(cam.rotation)
    best = cols[:, np.argmax(cols[0])]
    assert np.abs(best - np.array([1, 0, 0])).max() < 1e-3


def test_camera_from_vps_label_swap():
    f_true, cx, cy = 700.0, 319.5, 239.5
    rot = rotation_ypr(np.deg2rad(30), np.deg2rad(15), 0.0)
    rows = _vp_rows_from_camera(f_true, cx, cy, rot)
    cam1 = camera_from_vps(VanishingPoints(rows), 640, 480)
    swapped = rows[[1, 0, 2]]
    cam2 = camera_from_vps(VanishingPoints(swapped), 640, 480)
    assert abs(cam1.f - cam2.f) < 1e-9
    for i, j in ((0, 1), (1, 0), (2, 2)):
        dot = np.abs(cam1.rotation[:, j] @ cam2.rotation[:, i])
        assert abs(dot - 1) < 1e-9


def test_camera_from_vps_degenerate_cases():
    rows = np.array([[100.0, 100.0, 1.0], [100.5, 100.2, 1.0],
                     [1, 0, 0.0]])
    with pytest.raises(DegenerateGeometry):
        camera_from_vps(VanishingPoints(rows), 640, 480)
    rows = np.array([[1, 0, 0.0], [0, 1, 0.0], [300.0, 200.0, 1.0]])
    with pytest.raises(DegenerateGeometry):
        camera_from_vps(VanishingPoints(rows), 640, 480)


def test_vp_orthogonality_invariant():
    rot = rotation_ypr(np.deg2rad(30), np.deg2rad(18), np.deg2rad(4))
    img = draw_wireframe(manhattan_line_field(rot), f=500, width=640,
                         height=480)
    vps = detect_vanishing_points(img, seed=0)
    cam = camera_from_vps(vps, 640, 480)
    r = cam.rotation
    off = np.abs(r.T @ r - np.eye(3)).max()
    assert off < 1e-9  # orthonormal by construction
    # and the raw calibrated directions are pairwise orthogonal within 1e-3
    c = np.array([(640 - 1) / 2, (480 - 1) / 2])
    dirs = []
    for row in vps.vp:
        if row[2] == 0:
            d = np.array([row[0], row[1], 0.0])
        else:
            d = np.array([(row[0] - c[0]) / cam.f, (row[1] - c[1]) / cam.f, 1.0])
        dirs.append(d / np.linalg.norm(d))
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(dirs[i] @ dirs[j]) < 1e-3 + np.sin(np.deg2rad(2.0))
