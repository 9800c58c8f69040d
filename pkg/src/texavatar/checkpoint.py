"""Single-file avatar checkpoints and the texture atlas format.

Checkpoint layout (all integers little-endian)::

    b"TNAVCKPT" | u32 version | u32 header length | header JSON (utf-8)
    | float32 LE blobs in header["sections"] order

The header carries the config echo, its SHA-256 digest, the step counter,
the optimizer step count and one {name, shape} entry per blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .generator import Generator, GeneratorConfig
from .pose import RasterConfig, SkeletonDef

MAGIC = b"TNAVCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    category = "checkpoint"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class AvatarCheckpoint:
    generator: Generator
    textures: np.ndarray  # (n, 3, w, w)
    skeleton: SkeletonDef
    raster: RasterConfig
    config: dict = field(default_factory=dict)
    step: int = 0
    adam_t: int = 0
    adam_m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    adam_v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def header(self) -> dict:
        cfg = self.config
        return {
            "version": CHECKPOINT_VERSION,
            "config": cfg,
            "config_digest": hashlib.sha256(_dumps(cfg).encode()).hexdigest(),
            "generator": self.generator.config.to_dict(),
            "skeleton": self.skeleton.to_dict(),
            "raster": {"height": self.raster.height, "width": self.raster.width,
                       "depth_scale": self.raster.depth_scale},
            "step": self.step,
            "adam_t": self.adam_t,
        }

    def sections(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for k, p in self.generator.params.items():
            out[f"gen/{k}"] = p.data
        out["textures"] = self.textures
        for k, a in self.adam_m.items():
            out[f"adam_m/{k}"] = a
        for k, a in self.adam_v.items():
            out[f"adam_v/{k}"] = a
        return out


def save_checkpoint(ckpt: AvatarCheckpoint, path) -> Path:
    path = Path(path)
    header = ckpt.header()
    blobs = ckpt.sections()
    header["sections"] = [{"name": k, "shape": list(a.shape)} for k, a in blobs.items()]
    hbytes = _dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for a in blobs.values():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return path


def load_checkpoint(path) -> AvatarCheckpoint:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an avatar checkpoint")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", raw, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    off += 8
    header = json.loads(raw[off : off + hlen].decode())
    off += hlen
    digest = hashlib.sha256(_dumps(header["config"]).encode()).hexdigest()
    if digest != header["config_digest"]:
        raise CheckpointError(f"{path}: config digest mismatch")
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for sec in header["sections"]:
        shape = tuple(sec["shape"])
        count = int(np.prod(shape))
        arrays[sec["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
        off += 4 * count
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    gcfg = GeneratorConfig.from_dict(header["generator"])
    params = OrderedDict()
    m, v = OrderedDict(), OrderedDict()
    for name, a in arrays.items():
        kind, _, key = name.partition("/")
        if kind == "gen":
            params[key] = Tensor(a, requires_grad=True, name=key)
        elif kind == "adam_m":
            m[key] = a
        elif kind == "adam_v":
            v[key] = a
    r = header["raster"]
    return AvatarCheckpoint(
        generator=Generator(gcfg, params),
        textures=arrays["textures"],
        skeleton=SkeletonDef.from_dict(header["skeleton"]),
        raster=RasterConfig(r["height"], r["width"], r["depth_scale"]),
        config=header["config"],
        step=header["step"],
        adam_t=header["adam_t"],
        adam_m=m,
        adam_v=v,
    )


# ---------------------------------------------------------------- texture atlas


def write_atlas(directory, textures: np.ndarray) -> Path:
    """One 8-bit PNG per part plus ``atlas.json`` listing part order and side."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, _, w, _ = textures.shape
    names = []
    for k in range(n):
        name = f"part_{k:02d}.png"
        img = np.clip(np.floor(textures[k].transpose(1, 2, 0) * 255 + 0.5), 0, 255).astype(np.uint8)
        Image.fromarray(img, mode="RGB").save(directory / name)
        names.append(name)
    (directory / "atlas.json").write_text(json.dumps({"version": 1, "texture_side": w, "parts": names}, indent=1))
    return directory


def read_atlas(directory) -> np.ndarray:
    directory = Path(directory)
    meta = json.loads((directory / "atlas.json").read_text())
    w = meta["texture_side"]
    out = []
    for name in meta["parts"]:
        img = np.asarray(Image.open(directory / name).convert("RGB"), dtype=np.float32) / 255.0
        if img.shape[:2] != (w, w):
            raise CheckpointError(f"{name}: expected {w}x{w} texture, got {img.shape[:2]}")
        out.append(img.transpose(2, 0, 1))
    return np.stack(out)
