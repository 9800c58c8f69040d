"""On-disk datasets: manifest, pose records, 8-bit images, 16-bit UV maps.

Layout under the dataset root::

    manifest.json
    poses/<name>.json     frame id, camera id, intrinsics, joints (null = missing)
    rgb/<name>.png        8-bit RGB
    masks/<name>.png      8-bit grey, binarized at 0.5 on load
    uv/<name>_part.png    8-bit part index (n = background), optional
    uv/<name>_u.png       16-bit, coordinate / w * 65535, optional
    uv/<name>_v.png
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .pose import Camera, PoseFrame, SkeletonDef, rasterize_bones

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class DatasetError(ValueError):
    category = "dataset"


class MissingFileError(DatasetError):
    category = "missing-file"


class ShapeMismatchError(DatasetError):
    category = "shape-mismatch"


class SplitOverlapError(DatasetError):
    category = "split-overlap"


@dataclass
class Frame:
    frame_id: int
    camera_id: int
    pose: PoseFrame
    rgb: np.ndarray  # (3, H, W) in [0, 1]
    mask: np.ndarray  # (1, H, W) in {0, 1}
    p_star: np.ndarray | None = None  # (n + 1, H, W) one-hot
    c_star: np.ndarray | None = None  # (2n, H, W)

    @property
    def name(self) -> str:
        return frame_name(self.frame_id, self.camera_id)


def frame_name(frame_id: int, camera_id: int) -> str:
    return f"f{frame_id:05d}_c{camera_id:02d}"


@dataclass(frozen=True)
class Split:
    """Train/test cameras and pose-index ranges ([start, stop))."""

    train_cameras: tuple[int, ...]
    test_cameras: tuple[int, ...]
    train_frames: tuple[int, int]
    test_frames: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "train_cameras", tuple(int(c) for c in self.train_cameras))
        object.__setattr__(self, "test_cameras", tuple(int(c) for c in self.test_cameras))
        object.__setattr__(self, "train_frames", tuple(int(v) for v in self.train_frames))
        object.__setattr__(self, "test_frames", tuple(int(v) for v in self.test_frames))

    def validate(self) -> None:
        shared = set(self.train_cameras) & set(self.test_cameras)
        if shared:
            raise SplitOverlapError(f"cameras {sorted(shared)} appear in both train and test splits")
        (a0, a1), (b0, b1) = self.train_frames, self.test_frames
        if max(a0, b0) < min(a1, b1):
            raise SplitOverlapError(f"train frames {self.train_frames} overlap test frames {self.test_frames}")

    def contains(self, frame_id: int, camera_id: int, which: str) -> bool:
        if which == "train":
            cams, (lo, hi) = self.train_cameras, self.train_frames
        elif which == "test":
            cams, (lo, hi) = self.test_cameras, self.test_frames
        elif which == "all":
            return True
        else:
            raise ValueError(f"unknown split {which!r}")
        return camera_id in cams and lo <= frame_id < hi

    def to_dict(self) -> dict:
        return {
            "train_cameras": list(self.train_cameras),
            "test_cameras": list(self.test_cameras),
            "train_frames": list(self.train_frames),
            "test_frames": list(self.test_frames),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(d["train_cameras"], d["test_cameras"], tuple(d["train_frames"]), tuple(d["test_frames"]))


# ---------------------------------------------------------------- pose records


def pose_record(frame_id: int, camera_id: int, pose: PoseFrame) -> dict:
    joints = [[None if not np.isfinite(c) else float(c) for c in row] for row in pose.joints]
    return {"frame_id": frame_id, "camera_id": camera_id, "camera": pose.camera.to_dict(), "joints": joints}


def load_pose_record(path, skeleton: SkeletonDef) -> PoseFrame:
    """Read one pose file; joints with any null/NaN coordinate become NaN (invisible)."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"pose file not found: {path}")
    rec = json.loads(path.read_text())
    return pose_from_record(rec, skeleton, source=str(path))


def pose_from_record(rec: dict, skeleton: SkeletonDef, source: str = "<record>") -> PoseFrame:
    joints = np.array([[np.nan if c is None else c for c in row] for row in rec["joints"]], dtype=np.float64)
    if joints.ndim != 2 or joints.shape[1] != 3:
        raise ShapeMismatchError(f"{source}: joints must be a K x 3 array")
    if joints.shape[0] != skeleton.joint_count:
        raise ShapeMismatchError(
            f"{source}: {joints.shape[0]} joints, skeleton {skeleton.name or ''} expects {skeleton.joint_count}"
        )
    bad = ~np.isfinite(joints).all(axis=1)
    joints[bad] = np.nan
    return PoseFrame(joints, Camera.from_dict(rec["camera"]))


# ---------------------------------------------------------------- image codecs


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255 + 0.5), 0, 255).astype(np.uint8)


def write_rgb_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(_to_u8(np.transpose(rgb, (1, 2, 0))), mode="RGB").save(path)


def read_rgb_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_gray_png(path, img: np.ndarray) -> None:
    Image.fromarray(_to_u8(img), mode="L").save(path)


def read_gray_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float32) / 255.0


def write_u16_png(path, arr: np.ndarray) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint16)).save(path)


def read_u16_png(path) -> np.ndarray:
    im = Image.open(path)
    return np.asarray(im, dtype=np.uint16) if im.mode.startswith("I;16") else np.asarray(im).astype(np.uint16)


def encode_uv(p_star: np.ndarray, c_star: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    part = p_star.argmax(axis=0)
    n = p_star.shape[0] - 1
    fg = part < n
    k = np.where(fg, part, 0)
    u = np.take_along_axis(c_star[0::2], k[None], axis=0)[0]
    v = np.take_along_axis(c_star[1::2], k[None], axis=0)[0]
    scale = 65535.0 / w
    uq = np.where(fg, np.clip(np.floor(u * scale + 0.5), 0, 65535), 0).astype(np.uint16)
    vq = np.where(fg, np.clip(np.floor(v * scale + 0.5), 0, 65535), 0).astype(np.uint16)
    return part.astype(np.uint8), uq, vq


def decode_uv(part: np.ndarray, uq: np.ndarray, vq: np.ndarray, n: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild one-hot P* and C*; coordinates of unassigned parts are w / 2."""
    h, wd = part.shape
    p_star = np.zeros((n + 1, h, wd), dtype=np.float32)
    np.put_along_axis(p_star, part[None].astype(np.int64), 1.0, axis=0)
    c_star = np.full((2 * n, h, wd), w / 2, dtype=np.float32)
    fg = part < n
    ys, xs = np.nonzero(fg)
    k = part[fg].astype(np.int64)
    c_star[2 * k, ys, xs] = uq[fg] * (w / 65535.0)
    c_star[2 * k + 1, ys, xs] = vq[fg] * (w / 65535.0)
    return p_star, c_star


# ---------------------------------------------------------------- writing


def write_dataset(
    root,
    frames: Sequence[Frame],
    skeleton: SkeletonDef,
    split: Split,
    n_parts: int,
    texture_side: int,
    depth_scale: float,
    extra: dict | None = None,
) -> Path:
    root = Path(root)
    for sub in ("poses", "rgb", "masks", "uv"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    cameras: dict[int, dict] = {}
    records = []
    for f in frames:
        name = f.name
        cameras.setdefault(f.camera_id, f.pose.camera.to_dict())
        (root / "poses" / f"{name}.json").write_text(json.dumps(pose_record(f.frame_id, f.camera_id, f.pose)))
        write_rgb_png(root / "rgb" / f"{name}.png", f.rgb)
        write_gray_png(root / "masks" / f"{name}.png", f.mask[0])
        rec = {
            "frame_id": f.frame_id,
            "camera_id": f.camera_id,
            "pose": f"poses/{name}.json",
            "rgb": f"rgb/{name}.png",
            "mask": f"masks/{name}.png",
        }
        if f.p_star is not None and f.c_star is not None:
            part, uq, vq = encode_uv(f.p_star, f.c_star, texture_side)
            Image.fromarray(part, mode="L").save(root / "uv" / f"{name}_part.png")
            write_u16_png(root / "uv" / f"{name}_u.png", uq)
            write_u16_png(root / "uv" / f"{name}_v.png", vq)
            rec["uv"] = {"part": f"uv/{name}_part.png", "u": f"uv/{name}_u.png", "v": f"uv/{name}_v.png"}
        records.append(rec)
    h, w = frames[0].rgb.shape[1:] if frames else (0, 0)
    manifest = {
        "version": FORMAT_VERSION,
        "skeleton": skeleton.to_dict(),
        "image_size": [int(h), int(w)],
        "n_parts": n_parts,
        "texture_side": texture_side,
        "depth_scale": depth_scale,
        "cameras": [{"id": cid, **intr} for cid, intr in sorted(cameras.items())],
        "frames": records,
        "split": split.to_dict(),
    }
    if extra:
        manifest["extra"] = extra
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root


# ---------------------------------------------------------------- loading


class Dataset:
    """Validated dataset handle; frames are decoded lazily on access.

    Every ``frame(i)`` call is appended to ``access_log``.
    """

    def __init__(
        self,
        skeleton: SkeletonDef,
        split: Split,
        image_size: tuple[int, int],
        n_parts: int,
        texture_side: int,
        depth_scale: float,
        records: list[dict],
        root: Path | None = None,
        frames: list[Frame] | None = None,
        augment_mask: bool = True,
    ):
        self.skeleton = skeleton
        self.split = split
        self.image_size = tuple(image_size)
        self.n_parts = n_parts
        self.texture_side = texture_side
        self.depth_scale = depth_scale
        self.records = records
        self.root = root
        self._frames = frames
        self.augment_mask = augment_mask
        self.access_log: list[int] = []

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], skeleton: SkeletonDef, split: Split, n_parts: int,
                    texture_side: int, depth_scale: float) -> "Dataset":
        if not frames:
            raise DatasetError("dataset has no frames")
        split.validate()
        recs = [{"frame_id": f.frame_id, "camera_id": f.camera_id} for f in frames]
        h, w = frames[0].rgb.shape[1:]
        return cls(skeleton, split, (h, w), n_parts, texture_side, depth_scale, recs, frames=list(frames),
                   augment_mask=False)

    def __len__(self) -> int:
        return len(self.records)

    def indices(self, which: str = "all") -> list[int]:
        return [i for i, r in enumerate(self.records) if self.split.contains(r["frame_id"], r["camera_id"], which)]

    def frame(self, i: int) -> Frame:
        self.access_log.append(i)
        if self._frames is not None:
            return self._frames[i]
        return self._load(self.records[i])

    def __iter__(self) -> Iterator[Frame]:
        for i in range(len(self)):
            yield self.frame(i)

    def bone_maps(self, frame: Frame) -> np.ndarray:
        h, w = self.image_size
        return rasterize_bones(frame.pose, self.skeleton, h, w, self.depth_scale)

    def _load(self, rec: dict) -> Frame:
        root = self.root
        pose = load_pose_record(root / rec["pose"], self.skeleton)
        rgb = read_rgb_png(root / rec["rgb"])
        mask = (read_gray_png(root / rec["mask"]) >= 0.5).astype(np.float32)[None]
        if self.augment_mask:
            h, w = self.image_size
            bones = rasterize_bones(pose, self.skeleton, h, w, self.depth_scale)
            mask = np.maximum(mask, (bones > 0).any(axis=0)[None].astype(np.float32))
        p_star = c_star = None
        if "uv" in rec:
            uv = rec["uv"]
            part = np.asarray(Image.open(root / uv["part"]), dtype=np.uint8)
            p_star, c_star = decode_uv(part, read_u16_png(root / uv["u"]), read_u16_png(root / uv["v"]),
                                       self.n_parts, self.texture_side)
        return Frame(rec["frame_id"], rec["camera_id"], pose, rgb, mask, p_star, c_star)


def _check_image(path: Path, size: tuple[int, int], modes: tuple[str, ...]) -> None:
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    with Image.open(path) as im:
        if (im.height, im.width) != size:
            raise ShapeMismatchError(f"{path}: size {im.height}x{im.width}, manifest says {size[0]}x{size[1]}")
        if modes and im.mode not in modes:
            raise ShapeMismatchError(f"{path}: image mode {im.mode} not in {modes}")


def load_dataset(path, augment_mask: bool = True) -> Dataset:
    """Parse and fully validate a dataset directory (or its manifest.json)."""
    path = Path(path)
    root = path.parent if path.is_file() else path
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise MissingFileError(f"no manifest.json under {root}")
    try:
        m = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"{mpath}: invalid JSON ({e})") from e
    if m.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{mpath}: unsupported manifest version {m.get('version')!r}")
    skeleton = SkeletonDef.from_dict(m["skeleton"])
    split = Split.from_dict(m["split"])
    split.validate()
    records = m.get("frames") or []
    if not records:
        raise DatasetError(f"{mpath}: empty frame list")
    size = tuple(m["image_size"])
    known_cams = {c["id"] for c in m.get("cameras", [])}
    for rec in records:
        if known_cams and rec["camera_id"] not in known_cams:
            raise DatasetError(f"frame {rec['frame_id']} references unknown camera {rec['camera_id']}")
        p = root / rec["pose"]
        if not p.exists():
            raise MissingFileError(f"missing file: {p}")
        _check_image(root / rec["rgb"], size, ("RGB",))
        _check_image(root / rec["mask"], size, ("L", "1"))
        if "uv" in rec:
            _check_image(root / rec["uv"]["part"], size, ("L",))
            _check_image(root / rec["uv"]["u"], size, ())
            _check_image(root / rec["uv"]["v"], size, ())
    log.info("loaded dataset %s: %d frames", root, len(records))
    return Dataset(skeleton, split, size, int(m["n_parts"]), int(m["texture_side"]), float(m["depth_scale"]),
                   records, root=root, augment_mask=augment_mask)
