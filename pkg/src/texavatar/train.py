"""Training loop, rendering and hold-out evaluation."""

from __future__ import annotations

import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .checkpoint import AvatarCheckpoint, save_checkpoint
from .dataset import Dataset, load_dataset
from .generator import Generator, GeneratorConfig, build_generator, generator_forward
from .init_transfer import init_textures, pretrain_generator
from .losses import FeatureExtractor, LossWeights, loss_terms
from .metrics import ssim
from .pose import PoseFrame, RasterConfig, rasterize_bones
from .renderer import clamp_textures, composite, foreground_mask, sample_texture

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    dataset: str = ""
    # generator architecture; input channels, parts and texture side come from the dataset
    base_channels: int = 8
    res_channels: int = 32
    n_down: int = 2
    n_resblocks: int = 6
    shared_resblocks: int | None = None
    image_weight: float = 1.0
    mask_weight: float = 0.1
    lr: float = 1e-4
    texture_lr: float | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    pretrain_steps: int = 300
    pretrain_lr: float = 1e-3
    steps: int = 2000
    seed: int = 0
    feature_seed: int = 1234
    checkpoint_every: int = 0
    eval_every: int = 0
    eval_split: str = "test"
    # restrict training to these dataset indices (default: the train split)
    frame_indices: list[int] | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.steps < 0 or self.pretrain_steps < 0:
            raise ValueError("step counts must be >= 0")
        self.betas = tuple(self.betas)

    def generator_config(self, input_channels: int, n_parts: int, texture_side: int) -> GeneratorConfig:
        return GeneratorConfig(
            input_channels=input_channels, n_parts=n_parts, texture_side=texture_side,
            base_channels=self.base_channels, res_channels=self.res_channels, n_down=self.n_down,
            n_resblocks=self.n_resblocks, shared_resblocks=self.shared_resblocks,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.image_weight, self.mask_weight)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainResult:
    checkpoint: AvatarCheckpoint
    metrics: list[dict] = field(default_factory=list)


class _BoneCache:
    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._cache: dict[int, tuple] = {}

    def get(self, i: int):
        if i not in self._cache:
            f = self.dataset.frame(i)
            self._cache[i] = (self.dataset.bone_maps(f), f)
        return self._cache[i]


def _train_indices(config: TrainConfig, dataset: Dataset) -> list[int]:
    idx = list(config.frame_indices) if config.frame_indices is not None else dataset.indices("train")
    if not idx:
        raise ValueError("no training frames selected")
    return idx


def train(
    config: TrainConfig,
    dataset: Dataset | None = None,
    on_record: Callable[[dict], None] | None = None,
    generator: Generator | None = None,
) -> TrainResult:
    """Pretrain on UV targets, initialize textures, then optimize {generator, textures}.

    ``generator`` starts from existing weights (e.g. transferred from another
    avatar) instead of a fresh seeded build; its config must match.
    """
    dataset = dataset if dataset is not None else load_dataset(config.dataset)
    idx = _train_indices(config, dataset)
    h, w = dataset.image_size
    gcfg = config.generator_config(dataset.skeleton.channel_count, dataset.n_parts, dataset.texture_side)
    if h % 2**gcfg.n_down or w % 2**gcfg.n_down:
        raise ValueError(f"image size {h}x{w} not divisible by 2^{gcfg.n_down}")
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=1))
    metrics: list[dict] = []

    def emit(rec: dict) -> None:
        metrics.append(rec)
        if on_record:
            on_record(rec)
        if out_dir:
            with open(out_dir / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(rec) + "\n")

    if out_dir and (out_dir / "metrics.jsonl").exists():
        (out_dir / "metrics.jsonl").unlink()

    cache = _BoneCache(dataset)
    if generator is not None:
        if generator.config != gcfg:
            raise ValueError(f"starting generator config {generator.config} does not match {gcfg}")
        gen = generator.copy()
    else:
        gen = build_generator(gcfg, seed=config.seed)

    if config.pretrain_steps:
        triples = []
        for i in idx:
            B, f = cache.get(i)
            if f.p_star is None or f.c_star is None:
                raise ValueError(f"frame {i} has no UV targets; pretraining needs them")
            triples.append((B, f.p_star, f.c_star))
        pretrain_generator(gen, triples, config.pretrain_steps, lr=config.pretrain_lr, seed=config.seed,
                           on_step=lambda s, v: emit({"phase": "pretrain", "step": s, "loss": v}))

    textures = init_textures(gen, [(cache.get(i)[0], cache.get(i)[1].rgb, cache.get(i)[1].mask) for i in idx])
    T = Tensor(textures, requires_grad=True, name="textures")

    params = OrderedDict(gen.params)
    params["textures"] = T
    lrs = {"textures": config.texture_lr} if config.texture_lr is not None else None
    opt = Adam(params, lr=config.lr, betas=config.betas, lrs=lrs)
    fx = FeatureExtractor(seed=config.feature_seed)
    weights = config.loss_weights()
    rng = np.random.default_rng(config.seed + 1)
    order: list[int] = []

    def snapshot(step: int) -> AvatarCheckpoint:
        return AvatarCheckpoint(
            generator=gen.copy(),
            textures=T.data.copy(),
            skeleton=dataset.skeleton,
            raster=RasterConfig(h, w, dataset.depth_scale),
            config=config.to_dict(),
            step=step,
            adam_t=opt.t,
            adam_m=OrderedDict((k, a.copy()) for k, a in opt.m.items()),
            adam_v=OrderedDict((k, a.copy()) for k, a in opt.v.items()),
        )

    for step in range(config.steps):
        if not order:
            order = [idx[j] for j in rng.permutation(len(idx))]
        B, f = cache.get(order.pop())
        opt.zero_grad()
        P, C = generator_forward(gen, B)
        pred = sample_texture(P, C, T)
        terms = loss_terms(pred, P, f.rgb, f.mask, weights, fx)
        ad.backward(terms.total)
        opt.step()
        clamp_textures(T)
        emit({"phase": "main", "step": step, "loss": float(terms.total.data),
              "image_loss": float(terms.image.data), "mask_loss": float(terms.mask.data)})
        done = step + 1
        if config.eval_every and done % config.eval_every == 0:
            rep = evaluate(snapshot(done), dataset, config.eval_split)
            emit({"phase": "eval", "step": done, "split": config.eval_split, "ssim": rep["mean_ssim"]})
        if out_dir and config.checkpoint_every and done % config.checkpoint_every == 0:
            save_checkpoint(snapshot(done), out_dir / f"checkpoint_{done:06d}.tnav")

    ckpt = snapshot(config.steps)
    if out_dir:
        save_checkpoint(ckpt, out_dir / "checkpoint.tnav")
    return TrainResult(ckpt, metrics)


def pretrain_stage(config: TrainConfig, dataset: Dataset, on_record=None) -> AvatarCheckpoint:
    """Pretraining only; the checkpoint carries black textures."""
    idx = _train_indices(config, dataset)
    h, w = dataset.image_size
    gcfg = config.generator_config(dataset.skeleton.channel_count, dataset.n_parts, dataset.texture_side)
    gen = build_generator(gcfg, seed=config.seed)
    triples = []
    for i in idx:
        f = dataset.frame(i)
        if f.p_star is None or f.c_star is None:
            raise ValueError(f"frame {i} has no UV targets; pretraining needs them")
        triples.append((dataset.bone_maps(f), f.p_star, f.c_star))
    cb = (lambda s, v: on_record({"phase": "pretrain", "step": s, "loss": v})) if on_record else None
    pretrain_generator(gen, triples, config.pretrain_steps, lr=config.pretrain_lr, seed=config.seed, on_step=cb)
    textures = np.zeros((gcfg.n_parts, 3, gcfg.texture_side, gcfg.texture_side), np.float32)
    return AvatarCheckpoint(gen, textures, dataset.skeleton, RasterConfig(h, w, dataset.depth_scale),
                            config=config.to_dict())


def init_textures_stage(ckpt: AvatarCheckpoint, dataset: Dataset, indices: list[int] | None = None) -> AvatarCheckpoint:
    """Replace the checkpoint's textures by mean-aggregation over the given (default: train) frames."""
    idx = dataset.indices("train") if indices is None else indices
    frames = [dataset.frame(i) for i in idx]
    textures = init_textures(ckpt.generator, [(dataset.bone_maps(f), f.rgb, f.mask) for f in frames])
    return replace(ckpt, textures=textures, adam_t=0, adam_m=OrderedDict(), adam_v=OrderedDict())


# ---------------------------------------------------------------- inference


def predict(ckpt: AvatarCheckpoint, bones: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(rgb, mask, P, C) arrays for one bone stack, without recording gradients."""
    with ad.no_grad():
        P, C = generator_forward(ckpt.generator, bones)
        rgb = sample_texture(P, C, Tensor(ckpt.textures))
        M = foreground_mask(P)
    return rgb.data, M.data, P.data, C.data


def render(ckpt: AvatarCheckpoint, pose: PoseFrame, background: np.ndarray | None = None) -> np.ndarray:
    """Composited (3, H, W) image of the avatar in ``pose``; black background by default."""
    if pose.joints.shape[0] != ckpt.skeleton.joint_count:
        raise ValueError(f"pose has {pose.joints.shape[0]} joints, checkpoint skeleton has {ckpt.skeleton.joint_count}")
    r = ckpt.raster
    bones = rasterize_bones(pose, ckpt.skeleton, r.height, r.width, r.depth_scale)
    rgb, mask, _, _ = predict(ckpt, bones)
    with ad.no_grad():
        out = composite(Tensor(rgb), Tensor(mask), None if background is None else Tensor(background))
    return out.data


def evaluate(ckpt: AvatarCheckpoint, dataset: Dataset, split: str = "test") -> dict:
    """Mean and per-frame SSIM of renders against background-removed ground truth."""
    indices = dataset.indices(split)
    per_frame = []
    for i in indices:
        f = dataset.frame(i)
        img = render(ckpt, f.pose)
        per_frame.append({"index": i, "frame_id": f.frame_id, "camera_id": f.camera_id,
                          "ssim": ssim(img, f.rgb * f.mask)})
    mean = float(np.mean([p["ssim"] for p in per_frame])) if per_frame else float("nan")
    return {"split": split, "n_frames": len(per_frame), "mean_ssim": mean, "frames": per_frame}
