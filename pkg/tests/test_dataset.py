import json
import shutil

import numpy as np
import pytest
from PIL import Image

from texavatar.dataset import (
    DatasetError, MissingFileError, ShapeMismatchError, Split, SplitOverlapError, decode_uv, encode_uv,
    load_dataset, load_pose_record, pose_record, write_dataset,
)
from texavatar.pose import CMU19, Camera, PoseFrame, SkeletonDef, rasterize_bones


@pytest.fixture(scope="module")
def written(tmp_path_factory, figure, dataset_frames):
    frames, split = dataset_frames
    root = tmp_path_factory.mktemp("ds")
    write_dataset(root, frames, figure.skeleton, split, figure.n_parts, figure.texture_side, 8.0)
    return root


def _copy(written, tmp_path):
    dst = tmp_path / "copy"
    shutil.copytree(written, dst)
    return dst


def _edit_manifest(root, fn):
    m = json.loads((root / "manifest.json").read_text())
    fn(m)
    (root / "manifest.json").write_text(json.dumps(m))


def test_round_trip(written, dataset_frames, figure):
    frames, split = dataset_frames
    ds = load_dataset(written, augment_mask=False)
    assert len(ds) == len(frames) and ds.split == split
    assert ds.skeleton == figure.skeleton
    w = figure.texture_side
    for i, src in enumerate(frames):
        f = ds.frame(i)
        assert (f.frame_id, f.camera_id) == (src.frame_id, src.camera_id)
        assert f.pose.joints.tobytes() == src.pose.joints.tobytes()
        assert f.pose.camera == src.pose.camera
        assert np.abs(f.rgb - src.rgb).max() <= 1 / 255 + 1e-7
        np.testing.assert_array_equal(f.mask, src.mask)
        np.testing.assert_array_equal(f.p_star, src.p_star)
        fg = src.mask[0] > 0
        for k in range(figure.n_parts):
            sel = fg & (src.p_star[k] == 1)
            assert np.abs(f.c_star[2 * k][sel] - src.c_star[2 * k][sel]).max(initial=0) <= w / 65535
            assert np.abs(f.c_star[2 * k + 1][sel] - src.c_star[2 * k + 1][sel]).max(initial=0) <= w / 65535


def test_mask_augmented_with_skeleton(written, figure):
    ds = load_dataset(written)
    raw = load_dataset(written, augment_mask=False)
    f, g = ds.frame(0), raw.frame(0)
    bones = (ds.bone_maps(f) > 0).any(axis=0)
    np.testing.assert_array_equal(f.mask[0], np.maximum(g.mask[0], bones))
    assert set(np.unique(f.mask)) <= {0.0, 1.0}


def test_split_overlap_rejected(written, tmp_path):
    root = _copy(written, tmp_path)

    def overlap(m):
        m["split"]["test_cameras"] = m["split"]["test_cameras"] + [m["split"]["train_cameras"][0]]

    _edit_manifest(root, overlap)
    with pytest.raises(SplitOverlapError):
        load_dataset(root)


def test_overlapping_frame_ranges_rejected():
    with pytest.raises(SplitOverlapError):
        Split((0,), (1,), (0, 5), (4, 8)).validate()


def test_empty_frame_list_rejected(written, tmp_path):
    root = _copy(written, tmp_path)
    _edit_manifest(root, lambda m: m.update(frames=[]))
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(root)


def test_missing_file_rejected(written, tmp_path):
    root = _copy(written, tmp_path)
    next((root / "rgb").glob("*.png")).unlink()
    with pytest.raises(MissingFileError):
        load_dataset(root)


def test_wrong_image_size_rejected(written, tmp_path):
    root = _copy(written, tmp_path)
    target = next((root / "masks").glob("*.png"))
    Image.fromarray(np.zeros((10, 12), np.uint8), mode="L").save(target)
    with pytest.raises(ShapeMismatchError):
        load_dataset(root)


def test_unknown_manifest_version_rejected(written, tmp_path):
    root = _copy(written, tmp_path)
    _edit_manifest(root, lambda m: m.update(version=99))
    with pytest.raises(DatasetError, match="version"):
        load_dataset(root)


def test_distinct_error_categories():
    cats = {MissingFileError.category, ShapeMismatchError.category, SplitOverlapError.category}
    assert len(cats) == 3


def _cmu_record(tmp_path, joints):
    pose = PoseFrame(joints, Camera(100, 100, 32, 32))
    path = tmp_path / "pose.json"
    path.write_text(json.dumps(pose_record(0, 0, pose)))
    return path


def test_19_joint_record_accepted(tmp_path, rng):
    joints = np.c_[rng.uniform(-0.3, 0.3, (19, 2)), rng.uniform(2, 3, 19)]
    pose = load_pose_record(_cmu_record(tmp_path, joints), CMU19)
    assert pose.joints.tobytes() == joints.tobytes()


def test_19_joint_record_against_25_joint_skeleton_rejected(tmp_path, rng):
    body25 = SkeletonDef(25, tuple((i, i + 1) for i in range(24)))
    joints = np.c_[rng.uniform(-0.3, 0.3, (19, 2)), rng.uniform(2, 3, 19)]
    with pytest.raises(ShapeMismatchError):
        load_pose_record(_cmu_record(tmp_path, joints), body25)


def test_nan_joint_loaded_invisible(tmp_path, rng):
    joints = np.c_[rng.uniform(-0.3, 0.3, (19, 2)), rng.uniform(2, 3, 19)]
    joints[1] = np.nan
    pose = load_pose_record(_cmu_record(tmp_path, joints), CMU19)
    assert not pose.visible()[1] and pose.visible()[0]
    B = rasterize_bones(pose, CMU19, 64, 64, 4.0)
    for c, (a, b) in enumerate(CMU19.bones):
        if 1 in (a, b):
            assert not B[c].any()


def test_missing_pose_file(tmp_path):
    with pytest.raises(MissingFileError):
        load_pose_record(tmp_path / "nope.json", CMU19)


def test_uv_codec_round_trip(rng):
    n, w = 4, 32
    labels = rng.integers(0, n + 1, size=(6, 7))
    p_star = np.eye(n + 1, dtype=np.float32)[labels].transpose(2, 0, 1)
    c_star = rng.uniform(0, w, size=(2 * n, 6, 7)).astype(np.float32)
    p2, c2 = decode_uv(*encode_uv(p_star, c_star, w), n, w)
    np.testing.assert_array_equal(p2, p_star)
    for k in range(n):
        sel = labels == k
        assert np.abs(c2[2 * k][sel] - c_star[2 * k][sel]).max(initial=0) <= w / 65535
        assert (c2[2 * k][~sel] == w / 2).all()


def test_indices_and_access_log(written):
    ds = load_dataset(written)
    test_idx = ds.indices("test")
    assert test_idx and not set(test_idx) & set(ds.indices("train"))
    for i in test_idx:
        ds.frame(i)
    assert ds.access_log == test_idx
