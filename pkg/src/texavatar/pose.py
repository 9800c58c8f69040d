"""Skeletons, pinhole projection and bone-map rasterization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SkeletonDef:
    joint_count: int
    bones: tuple[tuple[int, int], ...]
    joint_names: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        bones = tuple((int(a), int(b)) for a, b in self.bones)
        object.__setattr__(self, "bones", bones)
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        if self.joint_count <= 0:
            raise ValueError("skeleton needs at least one joint")
        for a, b in bones:
            if not (0 <= a < self.joint_count and 0 <= b < self.joint_count):
                raise ValueError(f"bone ({a}, {b}) references a joint outside [0, {self.joint_count})")
        if len(set(bones)) != len(bones):
            raise ValueError("duplicate bone pairs in skeleton")
        if self.joint_names and len(self.joint_names) != self.joint_count:
            raise ValueError("joint_names length does not match joint_count")

    @property
    def channel_count(self) -> int:
        return len(self.bones)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joint_count": self.joint_count,
            "joint_names": list(self.joint_names),
            "bones": [list(b) for b in self.bones],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonDef":
        return cls(
            joint_count=int(d["joint_count"]),
            bones=tuple(tuple(b) for b in d["bones"]),
            joint_names=tuple(d.get("joint_names", ())),
            name=d.get("name", ""),
        )


# CMU Panoptic body layout: 19 joints, 18 bones.
CMU19 = SkeletonDef(
    joint_count=19,
    joint_names=(
        "neck", "nose", "body_center", "l_shoulder", "l_elbow", "l_wrist", "l_hip", "l_knee",
        "l_ankle", "r_shoulder", "r_elbow", "r_wrist", "r_hip", "r_knee", "r_ankle",
        "l_eye", "l_ear", "r_eye", "r_ear",
    ),
    bones=(
        (0, 1), (0, 3), (3, 4), (4, 5), (0, 2), (2, 6), (6, 7), (7, 8), (2, 12),
        (12, 13), (13, 14), (0, 9), (9, 10), (10, 11), (1, 15), (15, 16), (1, 17), (17, 18),
    ),
    name="cmu19",
)


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not all(np.isfinite([self.cx, self.cy])):
            raise ValueError("principal point must be finite")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


@dataclass
class PoseFrame:
    """Joints in camera coordinates (meters, z forward). NaN rows mark missing joints."""

    joints: np.ndarray
    camera: Camera

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)
        if np.isinf(self.joints).any():
            raise ValueError("joint coordinates must be finite (NaN marks a missing joint)")

    def visible(self) -> np.ndarray:
        return np.isfinite(self.joints).all(axis=1) & (np.nan_to_num(self.joints[:, 2]) > 0)


@dataclass(frozen=True)
class RasterConfig:
    height: int = 64
    width: int = 64
    depth_scale: float = 8.0


def project(joint, camera: Camera) -> tuple[float, float] | None:
    """Pinhole projection; None for joints at or behind the camera plane."""
    x, y, z = (float(v) for v in joint)
    if not np.isfinite([x, y, z]).all() or z <= 0:
        return None
    return camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy


def _clip_segment(a, b, width: int, height: int) -> tuple[float, float] | None:
    """Liang-Barsky clip of a->b against the pixel-area rectangle; returns (t0, t1)."""
    d = (b[0] - a[0], b[1] - a[1])
    lo = (-0.5, -0.5)
    hi = (width - 0.5, height - 0.5)
    t0, t1 = 0.0, 1.0
    for axis in range(2):
        if d[axis] == 0:
            if not lo[axis] <= a[axis] <= hi[axis]:
                return None
            continue
        ta = (lo[axis] - a[axis]) / d[axis]
        tb = (hi[axis] - a[axis]) / d[axis]
        t0 = max(t0, min(ta, tb))
        t1 = min(t1, max(ta, tb))
        if t0 > t1:
            return None
    return t0, t1


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """8-connected Bresenham line, endpoints included, as (x, y) pairs."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _round(v: float) -> int:
    return int(np.floor(v + 0.5))


def rasterize_bone(a3, b3, camera: Camera, height: int, width: int, depth_scale: float) -> np.ndarray:
    """One bone channel: normalized depth along the projected segment, zero elsewhere."""
    out = np.zeros((height, width), dtype=np.float32)
    pa, pb = project(a3, camera), project(b3, camera)
    if pa is None or pb is None:
        return out
    clipped = _clip_segment(pa, pb, width, height)
    if clipped is None:
        return out
    t0, t1 = clipped
    dx, dy = pb[0] - pa[0], pb[1] - pa[1]
    ends = [(pa[0] + t * dx, pa[1] + t * dy) for t in (t0, t1)]
    (x0, y0), (x1, y1) = [(min(max(_round(x), 0), width - 1), min(max(_round(y), 0), height - 1)) for x, y in ends]
    length2 = dx * dx + dy * dy
    za, zb = float(a3[2]), float(b3[2])
    for x, y in line_pixels(x0, y0, x1, y1):
        if length2 < 1e-12:
            t = 0.5
        else:
            t = min(max(((x - pa[0]) * dx + (y - pa[1]) * dy) / length2, 0.0), 1.0)
        z = za + t * (zb - za)
        out[y, x] = min(max(z / depth_scale, 0.0), 1.0)
    return out


def rasterize_bones(pose: PoseFrame, skeleton: SkeletonDef, height: int, width: int, depth_scale: float) -> np.ndarray:
    """Bone map stack of shape (J, H, W), one channel per skeleton bone."""
    if depth_scale <= 0:
        raise ValueError(f"depth_scale must be positive, got {depth_scale}")
    if pose.joints.shape[0] != skeleton.joint_count:
        raise ValueError(f"pose has {pose.joints.shape[0]} joints, skeleton expects {skeleton.joint_count}")
    stack = np.zeros((skeleton.channel_count, height, width), dtype=np.float32)
    for j, (a, b) in enumerate(skeleton.bones):
        stack[j] = rasterize_bone(pose.joints[a], pose.joints[b], pose.camera, height, width, depth_scale)
    return stack


def stack_for_person(pose: PoseFrame, skeleton: SkeletonDef, config: RasterConfig) -> np.ndarray:
    if skeleton.channel_count == 0:
        raise ValueError("skeleton has no bones; a bone map stack needs at least one channel")
    return rasterize_bones(pose, skeleton, config.height, config.width, config.depth_scale)
