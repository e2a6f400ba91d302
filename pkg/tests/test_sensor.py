import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from benthos.sensor import (
    CameraIntrinsics,
    DepthLimits,
    OutOfBoundsError,
    SensorFrame,
    backproject,
    backproject_pixels,
    camera_to_world,
    classify_points,
    dump_frame,
    load_depth_pfm,
    load_pgm,
    project_points,
    render_frame,
    save_depth_pfm,
    save_pgm,
)
from benthos.world import OBSTACLE, OYSTER, WRECK, Pose2D, WorldSpec
from oracles import ray_prism_depth


def _world(labels, heights, cs=0.5, kind="oyster-patch"):
    ny, nx = labels.shape
    return WorldSpec(nx * cs, ny * cs, cs, heights, labels, Pose2D(0.25, 0.25), 0, kind)


def _frame(depth, seg=None, pose=Pose2D(0, 0, 0, 0), intr=None):
    intr = intr or CameraIntrinsics.from_fov(depth.shape[1], depth.shape[0])
    seg = np.zeros(depth.shape, np.uint8) if seg is None else seg
    return SensorFrame(depth, seg, pose, intr)


def test_default_intrinsics():
    k = CameraIntrinsics.from_fov()
    assert (k.fx, k.fy, k.cx, k.cy, k.width, k.height) == (64.0, 64.0, 64.0, 48.0, 128, 96)
    assert k.hfov == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("args", [(0, 1, 5, 5, 10, 10), (1, 1, 0, 5, 10, 10), (1, 1, 5, 10, 10, 10)])
def test_intrinsics_invariants(args):
    with pytest.raises(ValueError):
        CameraIntrinsics(*args)


def test_depth_limits_invariant():
    with pytest.raises(ValueError):
        DepthLimits(0.5, 0.2)


def test_principal_ray_identity_transform():
    k = CameraIntrinsics(100, 100, 50, 50, 200, 100)
    np.testing.assert_allclose(backproject_pixels(50, 50, 2.0, k, np.eye(4)), [0, 0, 2])
    np.testing.assert_allclose(backproject_pixels(150, 50, 2.0, k, np.eye(4)), [2, 0, 2])


def test_homogeneous_divide_applied():
    k = CameraIntrinsics(100, 100, 50, 50, 200, 100)
    T = 2.0 * np.eye(4)  # w = 2 everywhere: divide must cancel the scale
    np.testing.assert_allclose(backproject_pixels(150, 50, 2.0, k, T), [2, 0, 2])


def test_camera_frame_is_rotation():
    T = camera_to_world(Pose2D(3, 4, 0.7, 2.0))
    R = T[:3, :3]
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    np.testing.assert_allclose(R[:, 2], [math.cos(0.7), math.sin(0.7), 0])


def test_depth_validity_filter():
    depth = np.full((4, 4), 2.0)
    depth[0, 0] = 0.05
    depth[1, 1] = np.nan
    depth[2, 2] = 25.0
    bp = backproject(_frame(depth))
    assert len(bp.points) == 13
    assert (0, 0) not in {tuple(p) for p in bp.pixels}


@settings(max_examples=300)
@given(
    st.floats(20, 300), st.floats(20, 300), st.floats(0, 1), st.floats(0, 1),
    st.floats(-50, 50), st.floats(-50, 50), st.floats(-4, 4), st.floats(0.5, 5),
    st.floats(0.1, 20), st.floats(0, 1), st.floats(0, 1),
)
def test_reprojection_round_trip(fx, fy, au, av, x, y, yaw, alt, z, pu, pv):
    w, h = 160, 120
    k = CameraIntrinsics(fx, fy, 1 + au * (w - 2), 1 + av * (h - 2), w, h)
    T = camera_to_world(Pose2D(x, y, yaw, alt))
    u, v = pu * (w - 1), pv * (h - 1)
    uvz = project_points(backproject_pixels(u, v, z, k, T), k, T)
    for got, want in zip(uvz, (u, v, z)):
        assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def test_classification_precedence_and_bounds():
    depth = np.full((1, 3), 2.0)
    seg = np.array([[1, 0, 0]], np.uint8)
    frame = _frame(depth, seg)
    from benthos.sensor import BackProjection

    pts = np.array([[0, 0, 5.0], [0, 0, 1.0], [0, 0, 0.99]])
    bp = BackProjection(pts, np.array([[0, 0], [1, 0], [2, 0]]))
    cp = classify_points(bp, frame, 1.0, 10.0)
    assert cp.obj.tolist() == [[0, 0, 5.0]]
    assert cp.obs.tolist() == [[0, 0, 1.0]]
    assert cp.empty.tolist() == [[0, 0, 0.99]]
    with pytest.raises(ValueError):
        classify_points(bp, frame, 2.0, 1.0)


def test_empty_seabed_returns_only_floor():
    labels = np.zeros((80, 80), np.uint8)
    w = _world(labels, np.zeros((80, 80)))
    k = CameraIntrinsics.from_fov()
    f = render_frame(w, Pose2D(1.0, 20.0, 0.0, 2.0))
    b = (np.arange(k.height) - k.cy) / k.fy
    # at or above the horizon nothing returns within range
    assert np.isnan(f.depth[b <= 0]).all()
    for row in np.nonzero(b > 0)[0]:
        want = 2.0 / b[row]
        if want <= 20.0:
            np.testing.assert_allclose(f.depth[row], want, atol=2e-4)
        else:
            assert np.isnan(f.depth[row]).all()
    assert f.segmentation.sum() == 0


def test_wall_two_metres_ahead():
    labels = np.zeros((80, 80), np.uint8)
    heights = np.zeros((80, 80))
    labels[:, 40] = WRECK  # wall occupying x in [20, 20.5)
    heights[:, 40] = 4.0
    w = _world(labels, heights, kind="shipwreck")
    f = render_frame(w, Pose2D(18.0, 20.0, 0.0, 2.0))
    k = f.intrinsics
    col = int(k.cx)
    centre = f.depth[int(k.cy), col]
    assert abs(centre - 2.0) <= 0.5
    assert centre == pytest.approx(2.0, abs=1e-3)
    assert f.segmentation[int(k.cy), col] == 1


def _scene(seed):
    rng = np.random.default_rng(seed)
    labels = np.zeros((14, 14), np.uint8)
    heights = np.zeros((14, 14))
    for _ in range(10):
        ix, iy = rng.integers(0, 14, 2)
        lab = rng.choice([OYSTER, OBSTACLE, WRECK])
        labels[iy, ix] = lab
        heights[iy, ix] = {OYSTER: 0.3, OBSTACLE: 2.0, WRECK: 3.5}[lab] + rng.uniform(0, 0.5)
    return _world(labels, heights)


@pytest.mark.parametrize("seed", range(4))
def test_render_matches_per_pixel_ray_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    w = _scene(seed)
    k = CameraIntrinsics.from_fov(24, 18)
    pose = Pose2D(rng.uniform(0.3, 6.7), rng.uniform(0.3, 6.7), rng.uniform(-math.pi, math.pi), rng.uniform(1.2, 2.5))
    f = render_frame(w, pose, k)
    T = camera_to_world(pose)
    checked = 0
    for v in range(k.height):
        for u in range(k.width):
            ray = T[:3, :3] @ np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
            z, hit, gap = ray_prism_depth(T[:3, 3], ray, w.heightfield, w.cell_size_m, T[:3, 2])
            if gap < 1e-6:
                continue  # edge/corner graze: either answer is right
            checked += 1
            if not z <= 20.0:
                assert np.isnan(f.depth[v, u])
                continue
            assert f.depth[v, u] == pytest.approx(z, abs=2e-4)
            if hit[0] == "floor":
                cx, cy = hit[1]
                inside = 0 <= cx < w.nx and 0 <= cy < w.ny
                lab = w.labels[cy, cx] if inside else 0
            else:
                lab = w.labels[hit[1], hit[0]]
            assert f.segmentation[v, u] == int(lab == OYSTER)
    assert checked > 0.9 * k.width * k.height


def test_no_surface_behind_an_occluder():
    labels = np.zeros((40, 40), np.uint8)
    heights = np.zeros((40, 40))
    labels[:, 20] = OBSTACLE
    heights[:, 20] = 3.0
    labels[:, 30] = OYSTER
    heights[:, 30] = 0.4
    w = _world(labels, heights)
    f = render_frame(w, Pose2D(5.0, 10.0, 0.0, 2.0))
    assert f.segmentation.sum() == 0
    assert np.nanmax(f.depth) <= 10.0 - 5.0 + 1e-3


def test_depth_limit_monotone():
    w = _scene(3)
    pose = Pose2D(3.5, 3.5, 0.4, 2.0)
    near = backproject(render_frame(w, pose, limits=DepthLimits(0.1, 4.0)))
    far = backproject(render_frame(w, pose, limits=DepthLimits(0.1, 20.0)))
    assert {tuple(p) for p in near.pixels} <= {tuple(p) for p in far.pixels}


def test_pose_outside_world():
    with pytest.raises(OutOfBoundsError):
        render_frame(_scene(0), Pose2D(-1.0, 2.0))


def test_flip_noise_is_seeded():
    w = _scene(1)
    pose = Pose2D(3.5, 3.5, 0.4, 2.0)
    a = render_frame(w, pose, flip_prob=0.2, rng=np.random.default_rng(5))
    b = render_frame(w, pose, flip_prob=0.2, rng=np.random.default_rng(5))
    clean = render_frame(w, pose)
    assert np.array_equal(a.segmentation, b.segmentation)
    assert not np.array_equal(a.segmentation, clean.segmentation)


def test_frame_dump_round_trip(tmp_path):
    f = render_frame(_scene(2), Pose2D(3.5, 3.5, 1.0, 2.0))
    dump_frame(f, tmp_path, "f")
    d = load_depth_pfm(tmp_path / "f_depth.pfm")
    np.testing.assert_array_equal(d, f.depth.astype(np.float32))
    assert np.array_equal(load_pgm(tmp_path / "f_seg.pgm"), f.segmentation * 255)
    img = np.array([[9, 32, 10], [13, 0, 255]], np.uint8)  # leading whitespace bytes survive
    save_pgm(img, tmp_path / "x.pgm")
    assert np.array_equal(load_pgm(tmp_path / "x.pgm"), img)
    save_depth_pfm(np.array([[1.5, np.nan]]), tmp_path / "y.pfm")
    y = load_depth_pfm(tmp_path / "y.pfm")
    assert y[0, 0] == 1.5 and np.isnan(y[0, 1])


def test_partition_on_rendered_frames():
    w = _scene(0)
    for yaw in np.linspace(-3, 3, 7):
        f = render_frame(w, Pose2D(3.5, 3.5, yaw, 2.0))
        bp = backproject(f)
        cp = classify_points(bp, f)
        assert cp.total == len(bp.points)
