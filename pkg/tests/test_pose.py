import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from texavatar.pose import (
    CMU19, Camera, PoseFrame, RasterConfig, SkeletonDef, project, rasterize_bones, stack_for_person,
)

CAM = Camera(100.0, 100.0, 64.0, 64.0)


def test_project_optical_axis():
    assert project((0, 0, 1), CAM) == (64.0, 64.0)


def test_project_similar_triangles():
    assert project((1, 0, 2), CAM) == (114.0, 64.0)


def test_project_behind_camera_is_invisible():
    assert project((0, 0, -1), CAM) is None
    assert project((0, 0, 0), CAM) is None
    assert project((np.nan, 0, 1), CAM) is None


def test_project_matches_formula():
    rng = np.random.default_rng(0)
    cam = Camera(87.5, 91.0, 30.2, 33.7)
    for X, Y, Z in rng.uniform([-2, -2, 0.5], [2, 2, 6], size=(50, 3)):
        x, y = project((X, Y, Z), cam)
        assert x == cam.fx * X / Z + cam.cx
        assert y == cam.fy * Y / Z + cam.cy


def _pixel_pose(points_xyz_pixels, depth_values):
    """Pose whose joints project exactly onto the given pixel positions (fx=fy=1, c=0)."""
    cam = Camera(1.0, 1.0, 0.0, 0.0)
    joints = [(x * z, y * z, z) for (x, y), z in zip(points_xyz_pixels, depth_values)]
    return PoseFrame(np.array(joints, dtype=float), cam)


def test_degenerate_segment_single_pixel():
    pose = _pixel_pose([(5, 5), (5, 5)], [2.0, 2.0])
    sk = SkeletonDef(2, ((0, 1),))
    B = rasterize_bones(pose, sk, 10, 10, depth_scale=4.0)
    assert np.count_nonzero(B[0]) == 1
    assert B[0, 5, 5] == pytest.approx(0.5)


def nearest_point_depth(px, py, a, b, za, zb):
    """Oracle: depth at the nearest point of segment a-b to pixel centre (px, py)."""
    d = np.subtract(b, a)
    t = np.clip(np.dot(np.subtract((px, py), a), d) / np.dot(d, d), 0, 1)
    return za + t * (zb - za)


def test_diagonal_segment_interpolates_depth():
    pose = _pixel_pose([(0, 0), (3, 3)], [1.0, 4.0])
    sk = SkeletonDef(2, ((0, 1),))
    B = rasterize_bones(pose, sk, 6, 6, depth_scale=4.0)
    expected = [nearest_point_depth(i, i, (0, 0), (3, 3), 1.0, 4.0) / 4.0 for i in range(4)]
    np.testing.assert_allclose(expected, [0.25, 0.5, 0.75, 1.0])
    for i, e in enumerate(expected):
        assert B[0, i, i] == pytest.approx(e, abs=1e-6)
    assert np.count_nonzero(B[0]) == 4


def test_bone_behind_camera_is_empty():
    pose = PoseFrame(np.array([[0.0, 0.0, 2.0], [0.1, 0.1, -1.0]]), CAM)
    B = rasterize_bones(pose, SkeletonDef(2, ((0, 1),)), 128, 128, 4.0)
    assert not B.any()


def test_segment_outside_frame_is_empty_and_partial_is_clipped():
    sk = SkeletonDef(2, ((0, 1),))
    outside = _pixel_pose([(-20, 3), (-5, 8)], [1.0, 1.0])
    assert not rasterize_bones(outside, sk, 10, 10, 2.0).any()
    partial = _pixel_pose([(-10, 4), (5, 4)], [1.0, 1.0])
    B = rasterize_bones(partial, sk, 10, 10, 2.0)
    np.testing.assert_array_equal(np.nonzero(B[0][4])[0], np.arange(6))
    assert np.count_nonzero(B[0]) == 6


def test_nan_joint_leaves_channel_empty():
    pose = PoseFrame(np.array([[0.0, 0.0, 2.0], [np.nan, np.nan, np.nan], [0.2, 0.0, 2.0]]), CAM)
    sk = SkeletonDef(3, ((0, 1), (0, 2)))
    B = rasterize_bones(pose, sk, 128, 128, 4.0)
    assert not B[0].any() and B[1].any()


def test_cmu19_stack_has_18_channels():
    rng = np.random.default_rng(1)
    joints = np.c_[rng.uniform(-0.5, 0.5, (19, 2)), rng.uniform(2, 3, 19)]
    B = stack_for_person(PoseFrame(joints, CAM), CMU19, RasterConfig(128, 128, 4.0))
    assert CMU19.joint_count == 19 and B.shape == (18, 128, 128)


def test_empty_bone_list_rejected():
    sk = SkeletonDef(3, ())
    with pytest.raises(ValueError):
        stack_for_person(PoseFrame(np.ones((3, 3)), CAM), sk, RasterConfig(8, 8, 1.0))


def test_skeleton_validation():
    with pytest.raises(ValueError):
        SkeletonDef(2, ((0, 2),))
    with pytest.raises(ValueError):
        SkeletonDef(3, ((0, 1), (0, 1)))
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0.0, 0.0)


def test_synthetic_figure_fully_visible_has_ten_nonempty_channels(figure, dataset_frames):
    frames, _ = dataset_frames
    B = stack_for_person(frames[0].pose, figure.skeleton, RasterConfig(64, 64, 8.0))
    assert B.shape[0] == 10
    assert sum(bool(c.any()) for c in B) == 10


coords = st.floats(-1.0, 1.0, allow_nan=False)


@given(st.lists(st.tuples(coords, coords, st.floats(1.5, 6.0)), min_size=2, max_size=6), st.floats(0.5, 8.0))
@settings(max_examples=50, deadline=None)
def test_rasterization_values_in_unit_interval(joints, depth_scale):
    sk = SkeletonDef(len(joints), tuple((i, i + 1) for i in range(len(joints) - 1)))
    B = rasterize_bones(PoseFrame(np.array(joints), Camera(30, 30, 16, 16)), sk, 32, 32, depth_scale)
    assert B.min() >= 0 and B.max() <= 1


@given(
    st.lists(st.tuples(st.integers(12, 36), st.integers(12, 36)), min_size=3, max_size=5),
    st.integers(-6, 6), st.integers(-6, 6),
)
@settings(max_examples=50, deadline=None)
def test_image_plane_translation_shifts_rasterization(pixels, dx, dy):
    # all joints at one depth: a lateral move of (dx, dy) * z / f shifts every projection by (dx, dy) pixels
    z = 2.0
    f = 1.0
    pts = [(x + 0.25, y + 0.25) for x, y in pixels]
    sk = SkeletonDef(len(pts), tuple((i, i + 1) for i in range(len(pts) - 1)))
    cam = Camera(f, f, 0.0, 0.0)
    base = PoseFrame(np.array([(x * z / f, y * z / f, z) for x, y in pts]), cam)
    moved = PoseFrame(base.joints + np.array([dx * z / f, dy * z / f, 0.0]), cam)
    a = rasterize_bones(base, sk, 48, 48, 4.0)
    b = rasterize_bones(moved, sk, 48, 48, 4.0)
    np.testing.assert_allclose(np.roll(a, (dy, dx), axis=(1, 2)), b, atol=1e-6)


def test_bone_order_does_not_change_channels():
    rng = np.random.default_rng(5)
    joints = np.c_[rng.uniform(-0.5, 0.5, (5, 2)), rng.uniform(2, 3, 5)]
    bones = ((0, 1), (1, 2), (2, 3), (3, 4), (0, 4))
    pose = PoseFrame(joints, CAM)
    a = rasterize_bones(pose, SkeletonDef(5, bones), 128, 128, 4.0)
    perm = [3, 0, 4, 2, 1]
    b = rasterize_bones(pose, SkeletonDef(5, tuple(bones[p] for p in perm)), 128, 128, 4.0)
    np.testing.assert_array_equal(a[perm], b)
