"""Generator pretraining on UV targets, mean-aggregation texture init, transfer."""

from __future__ import annotations

import logging
from collections import OrderedDict
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .generator import Generator, GeneratorConfig, build_generator, generator_forward

log = logging.getLogger(__name__)


def pretrain_loss(P: Tensor, C: Tensor, p_star: np.ndarray, c_star: np.ndarray, texture_side: int) -> Tensor:
    """Cross-entropy on assignments + L1 on the true part's coordinates over foreground.

    Coordinates are compared in units of the texture side so both terms are O(1).
    """
    n = P.shape[0] - 1
    ce = ad.mul(ad.tensor_sum(ad.mul(ad.log(P, eps=1e-7), Tensor(p_star))), -1.0 / P.data[0].size)
    # weight each coordinate pair by the ground-truth one-hot of its part
    weight = np.repeat(p_star[:n], 2, axis=0) / texture_side
    count = max(float(p_star[:n].sum()), 1.0)
    diff = ad.l1_distance(ad.mul(C, Tensor(weight)), Tensor(c_star * weight))
    l1 = ad.mul(diff, C.data.size / (2 * count))
    return ad.add(ce, l1)


def pretrain_generator(
    gen: Generator,
    dataset: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    steps: int,
    lr: float = 1e-4,
    seed: int = 0,
    on_step: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Fit ``gen`` to (B, P*, C*) triples with Adam, one frame per step.

    Frames are visited in seeded shuffled epochs. Returns per-step losses.
    """
    if len(dataset) == 0:
        raise ValueError("pretraining needs a non-empty dataset")
    losses: list[float] = []
    if steps <= 0:
        return losses
    opt = Adam(gen.params, lr=lr)
    rng = np.random.default_rng(seed)
    order: list[int] = []
    w = gen.config.texture_side
    for step in range(steps):
        if not order:
            order = list(rng.permutation(len(dataset)))
        B, p_star, c_star = dataset[order.pop()]
        opt.zero_grad()
        P, C = generator_forward(gen, B)
        loss = pretrain_loss(P, C, p_star, c_star, w)
        ad.backward(loss)
        opt.step()
        value = float(loss.data)
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
        log.debug("pretrain step %d loss %.5f", step, value)
    return losses


def init_textures(
    gen: Generator,
    dataset: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    threshold: float = 0.5,
) -> np.ndarray:
    """Texel = mean colour of the training pixels hard-assigned to it; black if none.

    ``dataset`` holds (B, image (3,H,W), mask (1,H,W)) triples. A pixel is
    used when its ground-truth mask is set and the predicted background
    probability is below ``threshold``; it goes to the argmax part and the
    texel containing its predicted coordinate.
    """
    n, w = gen.config.n_parts, gen.config.texture_side
    keys, colours = [], []
    with ad.no_grad():
        for B, image, mask in dataset:
            P, C = generator_forward(gen, B)
            k, texel, rgb = _assignments(P.data, C.data, np.asarray(image), np.asarray(mask), n, w, threshold)
            keys.append(k * (w * w) + texel)
            colours.append(rgb)
    return _mean_by_key(np.concatenate(keys) if keys else np.zeros(0, int),
                        np.concatenate(colours, axis=1) if colours else np.zeros((3, 0)), n, w)


def _assignments(P, C, image, mask, n, w, threshold):
    fg = (P[n] < threshold) & (mask[0] > 0.5)
    k = P[:n].argmax(axis=0)[fg]
    cu = np.take_along_axis(C[0::2], P[:n].argmax(axis=0)[None], axis=0)[0][fg]
    cv = np.take_along_axis(C[1::2], P[:n].argmax(axis=0)[None], axis=0)[0][fg]
    i = np.clip(np.floor(cu).astype(np.int64), 0, w - 1)
    j = np.clip(np.floor(cv).astype(np.int64), 0, w - 1)
    return k.astype(np.int64), i * w + j, image[:, fg].astype(np.float64)


def _mean_by_key(keys: np.ndarray, colours: np.ndarray, n: int, w: int) -> np.ndarray:
    # sorting makes the float sums independent of frame order
    size = n * w * w
    tex = np.zeros((3, size))
    counts = np.bincount(keys, minlength=size).astype(np.float64)
    for ch in range(3):
        order = np.lexsort((colours[ch], keys))
        tex[ch] = np.bincount(keys[order], weights=colours[ch][order], minlength=size)
    tex = np.where(counts > 0, tex / np.maximum(counts, 1), 0.0)
    return tex.reshape(3, n, w, w).transpose(1, 0, 2, 3).astype(np.float32)


class TransferError(ValueError):
    category = "transfer"


def transfer_generator(source, target_config: GeneratorConfig) -> Generator:
    """Copy generator parameters from ``source`` (a Generator or checkpoint) into a new
    generator with ``target_config``. Textures are never copied.
    """
    src = getattr(source, "generator", source)
    target = build_generator(target_config, seed=0)
    problems = []
    for name, p in target.params.items():
        if name not in src.params:
            problems.append(f"  {name}: missing in source (target {p.shape})")
        elif src.params[name].shape != p.shape:
            problems.append(f"  {name}: source {src.params[name].shape} != target {p.shape}")
    for name in src.params:
        if name not in target.params:
            problems.append(f"  {name}: not present in target")
    if problems:
        raise TransferError("incompatible generator layers:\n" + "\n".join(problems))
    params = OrderedDict((k, Tensor(src.params[k].data, requires_grad=True, name=k)) for k in target.params)
    return Generator(target_config, params)
