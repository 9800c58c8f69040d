"""Procedural articulated figure with exact ground truth.

Each bone is a capsule. A pixel belongs to the nearest capsule its ray hits;
its texture coordinate is the cylindrical parameterization of the hit point:
the first coordinate runs along the bone axis, the second around it, both
scaled to [0, w]. World space is y-up; camera space is x right, y down,
z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Frame, Split
from .pose import Camera, PoseFrame, SkeletonDef

# pelvis, neck, head, l_elbow, l_hand, r_elbow, r_hand, l_knee, l_foot, r_knee, r_foot
DESK_SKELETON = SkeletonDef(
    joint_count=11,
    joint_names=("pelvis", "neck", "head", "l_elbow", "l_hand", "r_elbow", "r_hand",
                 "l_knee", "l_foot", "r_knee", "r_foot"),
    bones=((0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7), (7, 8), (0, 9), (9, 10)),
    name="desk10",
)

# per bone: parent bone (-1 = root), rest direction in the parent frame, length, radius, motion amplitude
_DESK_BONES = (
    (-1, (0.0, 1.0, 0.0), 0.55, 0.15, 0.12),
    (0, (0.0, 1.0, 0.0), 0.20, 0.11, 0.25),
    (0, (0.45, -1.0, 0.0), 0.30, 0.055, 0.6),
    (2, (0.0, 1.0, 0.0), 0.28, 0.045, 0.6),
    (0, (-0.45, -1.0, 0.0), 0.30, 0.055, 0.6),
    (4, (0.0, 1.0, 0.0), 0.28, 0.045, 0.6),
    (0, (0.2, -1.0, 0.0), 0.45, 0.075, 0.35),
    (6, (0.0, 1.0, 0.0), 0.45, 0.06, 0.35),
    (0, (-0.2, -1.0, 0.0), 0.45, 0.075, 0.35),
    (8, (0.0, 1.0, 0.0), 0.45, 0.06, 0.35),
)


def _rot_between(a, b) -> np.ndarray:
    """Rotation taking unit vector a onto unit vector b."""
    a = np.asarray(a, float) / np.linalg.norm(a)
    b = np.asarray(b, float) / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    if np.linalg.norm(v) < 1e-12:
        if c > 0:
            return np.eye(3)
        return np.diag([-1.0, -1.0, 1.0]) if abs(a[2]) < 0.9 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


def _euler(ax: float, ay: float, az: float) -> np.ndarray:
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


@dataclass
class BodyPose:
    """World-space joints plus one orthonormal frame per bone (column 1 = bone axis)."""

    joints: np.ndarray  # (K, 3)
    frames: np.ndarray  # (J, 3, 3)


@dataclass
class SyntheticFigure:
    skeleton: SkeletonDef
    radii: np.ndarray  # (J,)
    textures: np.ndarray  # (J, 3, w, w)
    parents: tuple[int, ...] = ()
    rest_dirs: np.ndarray | None = None
    lengths: np.ndarray | None = None
    amplitudes: np.ndarray | None = None
    root_height: float = 0.95

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.textures = np.asarray(self.textures, dtype=np.float32)
        if (self.radii <= 0).any():
            raise ValueError("capsule radii must be positive")
        if self.textures.min() < 0 or self.textures.max() > 1:
            raise ValueError("ground-truth textures must lie in [0, 1]")
        if len(self.radii) != self.skeleton.channel_count or len(self.textures) != self.skeleton.channel_count:
            raise ValueError("one radius and one texture per bone required")

    @property
    def n_parts(self) -> int:
        return self.skeleton.channel_count

    @property
    def texture_side(self) -> int:
        return self.textures.shape[-1]

    def pose(self, angles: np.ndarray | None = None, root_yaw: float = 0.0,
             root_offset=(0.0, 0.0, 0.0)) -> BodyPose:
        """Forward kinematics from per-bone euler angles (J, 3)."""
        J = self.n_parts
        angles = np.zeros((J, 3)) if angles is None else np.asarray(angles, float)
        joints = np.full((self.skeleton.joint_count, 3), np.nan)
        frames = np.zeros((J, 3, 3))
        root = np.array([0.0, self.root_height, 0.0]) + np.asarray(root_offset, float)
        root_rot = _euler(0.0, root_yaw, 0.0)
        for j, (a, b) in enumerate(self.skeleton.bones):
            parent = self.parents[j]
            base = root_rot if parent < 0 else frames[parent]
            rot = base @ _rot_between((0, 1, 0), self.rest_dirs[j]) @ _euler(*angles[j])
            frames[j] = rot
            if parent < 0:
                joints[a] = root
            joints[b] = joints[a] + rot[:, 1] * self.lengths[j]
        return BodyPose(joints, frames)


def smooth_texture(rng: np.random.Generator, w: int) -> np.ndarray:
    """Base colour plus two low-frequency sinusoid patterns, in [0.05, 0.95]."""
    base = rng.uniform(0.25, 0.75, size=3)
    i = np.arange(w)[:, None] / w
    j = np.arange(w)[None, :] / w
    tex = np.empty((3, w, w))
    for c in range(3):
        f1, f2 = rng.integers(1, 3, size=2)
        p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
        a1, a2 = rng.uniform(0.08, 0.2, size=2)
        tex[c] = base[c] + a1 * np.sin(2 * np.pi * f1 * i + p1) + a2 * np.cos(2 * np.pi * f2 * j + p2)
    return np.clip(tex, 0.05, 0.95)


def default_figure(texture_side: int = 32, seed: int = 0) -> SyntheticFigure:
    rng = np.random.default_rng(seed)
    parents = tuple(b[0] for b in _DESK_BONES)
    textures = np.stack([smooth_texture(rng, texture_side) for _ in _DESK_BONES])
    return SyntheticFigure(
        skeleton=DESK_SKELETON,
        radii=np.array([b[3] for b in _DESK_BONES]),
        textures=textures,
        parents=parents,
        rest_dirs=np.array([b[1] for b in _DESK_BONES], dtype=float),
        lengths=np.array([b[2] for b in _DESK_BONES]),
        amplitudes=np.array([b[4] for b in _DESK_BONES]),
    )


@dataclass(frozen=True)
class ViewCamera:
    """Intrinsics plus a world-to-camera rigid transform ``p_cam = R (p - position)``."""

    intrinsics: Camera
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    camera_id: int = 0

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.position) @ np.asarray(self.rotation).T

    @classmethod
    def look_at(cls, intrinsics: Camera, position, target, camera_id: int = 0, up=(0.0, 1.0, 0.0)) -> "ViewCamera":
        position = np.asarray(position, float)
        fwd = np.asarray(target, float) - position
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return cls(intrinsics, np.stack([right, down, fwd]), position, camera_id)


def _capsule_hits(dirs: np.ndarray, a: np.ndarray, b: np.ndarray, r: float) -> np.ndarray:
    """Ray parameter of the first hit for rays from the origin along unit ``dirs``; inf on miss."""
    ba = b - a
    oa = -a
    baba = ba @ ba
    bard = dirs @ ba
    baoa = float(ba @ oa)
    rdoa = dirs @ oa
    oaoa = float(oa @ oa)
    t_out = np.full(dirs.shape[0], np.inf)
    if baba < 1e-18:
        # sphere
        bq = dirs @ oa
        h = bq * bq - (oaoa - r * r)
        t = -bq - np.sqrt(np.maximum(h, 0))
        ok = (h >= 0) & (t > 0)
        t_out[ok] = t[ok]
        return t_out
    qa = baba - bard * bard
    qb = baba * rdoa - baoa * bard
    qc = baba * oaoa - baoa * baoa - r * r * baba
    h = qb * qb - qa * qc
    hit = h >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-qb - np.sqrt(np.maximum(h, 0))) / qa
    y = baoa + t * bard
    body = hit & (y > 0) & (y < baba) & (t > 0)
    t_out[body] = t[body]
    # caps
    rest = hit & ~body
    for centre, sel in ((a, rest & (y <= 0)), (b, rest & (y > 0))):
        oc = -centre
        bq = dirs[sel] @ oc
        hc = bq * bq - (float(oc @ oc) - r * r)
        tc = -bq - np.sqrt(np.maximum(hc, 0))
        ok = (hc > 0) & (tc > 0)
        idx = np.nonzero(sel)[0][ok]
        t_out[idx] = tc[ok]
    return t_out


def pixel_rays(camera: Camera, height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    d = np.stack([(xs - camera.cx) / camera.fx, (ys - camera.cy) / camera.fy, np.ones_like(xs)], axis=-1)
    d = d.reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def lookup_bilinear(texture: np.ndarray, coord_u: np.ndarray, coord_v: np.ndarray) -> np.ndarray:
    """Plain numpy lookup at texture coordinates in [0, w] (texel centres at i + 0.5, edge clamp)."""
    w = texture.shape[-1]
    u = np.clip(coord_u - 0.5, 0, w - 1)
    v = np.clip(coord_v - 0.5, 0, w - 1)
    i0 = np.minimum(np.floor(u).astype(int), w - 2)
    j0 = np.minimum(np.floor(v).astype(int), w - 2)
    fu, fv = u - i0, v - j0
    return ((1 - fu) * (1 - fv) * texture[:, i0, j0] + (1 - fu) * fv * texture[:, i0, j0 + 1]
            + fu * (1 - fv) * texture[:, i0 + 1, j0] + fu * fv * texture[:, i0 + 1, j0 + 1])


def render_oracle(figure: SyntheticFigure, pose: BodyPose, camera: ViewCamera, height: int, width: int,
                  frame_id: int = 0) -> Frame:
    """Z-buffered capsule render with one-hot assignments and exact texture coordinates."""
    n, w = figure.n_parts, figure.texture_side
    joints_cam = camera.to_camera(pose.joints)
    frames_cam = np.einsum("ab,jbc->jac", np.asarray(camera.rotation), pose.frames)
    dirs = pixel_rays(camera.intrinsics, height, width)
    npx = dirs.shape[0]
    depth = np.full(npx, np.inf)
    part = np.full(npx, n, dtype=np.int64)
    for j, (a, b) in enumerate(figure.skeleton.bones):
        if not (np.isfinite(joints_cam[a]).all() and np.isfinite(joints_cam[b]).all()):
            continue
        t = _capsule_hits(dirs, joints_cam[a], joints_cam[b], float(figure.radii[j]))
        closer = t < depth
        depth[closer] = t[closer]
        part[closer] = j
    fg = part < n
    coords_u = np.full(npx, w / 2)
    coords_v = np.full(npx, w / 2)
    rgb = np.zeros((3, npx))
    for j, (a, b) in enumerate(figure.skeleton.bones):
        sel = part == j
        if not sel.any():
            continue
        pts = dirs[sel] * depth[sel, None]
        axis = joints_cam[b] - joints_cam[a]
        length = np.linalg.norm(axis)
        s = np.clip((pts - joints_cam[a]) @ axis / max(length**2, 1e-18), 0.0, 1.0)
        radial = pts - (joints_cam[a] + s[:, None] * axis)
        theta = np.arctan2(radial @ frames_cam[j][:, 2], radial @ frames_cam[j][:, 0])
        cu = s * w
        cv = (theta + np.pi) / (2 * np.pi) * w
        coords_u[sel], coords_v[sel] = cu, cv
        rgb[:, sel] = lookup_bilinear(figure.textures[j], cu, cv)
    p_star = np.zeros((n + 1, npx), dtype=np.float32)
    p_star[part, np.arange(npx)] = 1.0
    c_star = np.full((2 * n, npx), w / 2, dtype=np.float32)
    idx = np.nonzero(fg)[0]
    c_star[2 * part[idx], idx] = coords_u[idx]
    c_star[2 * part[idx] + 1, idx] = coords_v[idx]
    pose_frame = PoseFrame(joints_cam, camera.intrinsics)
    return Frame(
        frame_id=frame_id,
        camera_id=camera.camera_id,
        pose=pose_frame,
        rgb=rgb.reshape(3, height, width).astype(np.float32),
        mask=fg.reshape(1, height, width).astype(np.float32),
        p_star=p_star.reshape(n + 1, height, width),
        c_star=c_star.reshape(2 * n, height, width),
    )


def ring_cameras(n_cameras: int, size: int = 64, radius: float = 4.0, arc_degrees: float = 120.0,
                 height: float = 1.0, target=(0.0, 0.9, 0.0), focal: float | None = None) -> list[ViewCamera]:
    """Cameras evenly spaced on a horizontal arc around the figure, all looking at it."""
    focal = focal if focal is not None else 0.5 * size * radius / 1.15
    intr = Camera(focal, focal, (size - 1) / 2, (size - 1) / 2)
    half = np.radians(arc_degrees) / 2
    angles = np.linspace(-half, half, n_cameras) if n_cameras > 1 else np.zeros(1)
    cams = []
    for cid, ang in enumerate(angles):
        pos = (radius * np.sin(ang), height, radius * np.cos(ang))
        cams.append(ViewCamera.look_at(intr, pos, target, camera_id=cid))
    return cams


def motion_angles(figure: SyntheticFigure, n_poses: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Smooth seeded joint-angle trajectories (n_poses, J, 3) and root yaw (n_poses,)."""
    rng = np.random.default_rng(seed)
    J = figure.n_parts
    t = np.arange(n_poses)[:, None, None]
    angles = np.zeros((n_poses, J, 3))
    for _ in range(2):
        freq = rng.uniform(0.01, 0.04, size=(1, J, 3))
        phase = rng.uniform(0, 2 * np.pi, size=(1, J, 3))
        amp = rng.uniform(0.3, 0.6, size=(1, J, 3)) * figure.amplitudes[None, :, None]
        angles += amp * np.sin(2 * np.pi * freq * t + phase)
    yf, yp = rng.uniform(0.005, 0.02), rng.uniform(0, 2 * np.pi)
    yaw = 0.5 * np.sin(2 * np.pi * yf * np.arange(n_poses) + yp)
    return angles, yaw


def generate_dataset(
    figure: SyntheticFigure,
    n_cameras: int,
    n_poses: int,
    motion_seed: int,
    holdout_cameras: int = 1,
    holdout_fraction: float = 0.2,
    image_size: int = 64,
    arc_degrees: float = 120.0,
) -> tuple[list[Frame], Split]:
    """Render every (pose, camera) pair and describe a disjoint train/test split.

    Test cameras are spread through the interior of the arc; test poses are
    the final ``holdout_fraction`` of the motion.
    """
    if holdout_cameras > 0 and n_cameras < 2:
        raise ValueError("a held-out camera needs n_cameras >= 2")
    if holdout_cameras >= n_cameras:
        raise ValueError("at least one training camera is required")
    if n_poses < 1:
        raise ValueError("n_poses must be >= 1")
    cams = ring_cameras(n_cameras, size=image_size, arc_degrees=arc_degrees)
    if holdout_cameras:
        test_cams = sorted({int(round(x)) for x in np.linspace(0, n_cameras - 1, holdout_cameras + 2)[1:-1]})
    else:
        test_cams = []
    train_cams = [c for c in range(n_cameras) if c not in test_cams]
    n_test = int(round(n_poses * holdout_fraction)) if holdout_cameras else 0
    if holdout_cameras and n_test == 0 and n_poses > 1:
        n_test = 1
    split = Split(tuple(train_cams), tuple(test_cams), (0, n_poses - n_test), (n_poses - n_test, n_poses))
    split.validate()
    angles, yaw = motion_angles(figure, n_poses, motion_seed)
    frames = []
    for i in range(n_poses):
        body = figure.pose(angles[i], root_yaw=float(yaw[i]))
        for cam in cams:
            frames.append(render_oracle(figure, body, cam, image_size, image_size, frame_id=i))
    return frames, split
