"""Training objective: perceptual image loss, background BCE, weighted sum."""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor


class FeatureExtractor:
    """Fixed random conv pyramid used in place of pretrained VGG features.

    Tap 0 is the raw image. Each following tap is conv3x3 + ReLU; the first
    runs at full resolution and every later one halves the resolution.
    Parameters never require gradients.
    """

    def __init__(self, widths=(16, 32, 64, 128, 128), seed: int = 1234, in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.widths = tuple(widths)
        self.seed = seed
        self.layers: list[tuple[np.ndarray, np.ndarray, int]] = []
        self._cache: dict = {}
        cin = in_channels
        for i, cout in enumerate(self.widths):
            w = rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9))
            b = np.zeros(cout)
            w.flags.writeable = b.flags.writeable = False
            self.layers.append((w, b, 1 if i == 0 else 2))
            cin = cout

    def _tensors(self):
        dtype = ad.default_dtype()
        if dtype not in self._cache:
            self._cache[dtype] = [(Tensor(w), Tensor(b), s) for w, b, s in self.layers]
        return self._cache[dtype]

    @property
    def n_taps(self) -> int:
        return len(self.widths) + 1

    def features(self, image) -> list[Tensor]:
        x = as_tensor(image)
        if x.ndim != 3:
            raise ValueError(f"expected a (C, H, W) image, got {x.shape}")
        x = ad.reshape(x, (1, *x.shape))
        taps = [x]
        for w, b, stride in self._tensors():
            x = ad.relu(ad.conv2d(x, w, b, stride=stride, padding=1))
            taps.append(x)
        return taps


@dataclass(frozen=True)
class LossWeights:
    image_weight: float = 1.0
    mask_weight: float = 0.1

    def __post_init__(self):
        if self.image_weight < 0 or self.mask_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.image_weight == 0 and self.mask_weight == 0:
            raise ValueError("loss weights must not both be zero")

    def to_dict(self) -> dict:
        return asdict(self)


def image_loss(pred, target, fx: FeatureExtractor) -> Tensor:
    """Mean over taps of the mean absolute feature difference."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"image_loss shape mismatch: {pred.shape} vs {target.shape}")
    with ad.no_grad() if not target.requires_grad else nullcontext():
        target_feats = fx.features(target)
    terms = [ad.l1_distance(a, b) for a, b in zip(fx.features(pred), target_feats)]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))


def mask_loss(P: Tensor, gt_mask, eps: float = 1e-7) -> Tensor:
    """BCE between the predicted background channel and the ground-truth background."""
    gt = gt_mask.data if isinstance(gt_mask, Tensor) else np.asarray(gt_mask)
    n = P.shape[0] - 1
    if gt.shape != (1, *P.shape[1:]):
        raise ValueError(f"mask shape {gt.shape} does not match assignments {P.shape}")
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground-truth mask must be binary")
    p_bg = ad.take(P, slice(n, n + 1))
    return ad.binary_cross_entropy(p_bg, Tensor(1.0 - gt), eps=eps)


@dataclass
class LossTerms:
    total: Tensor
    image: Tensor
    mask: Tensor


def loss_terms(pred_rgb, P, gt_rgb, gt_mask, weights: LossWeights, fx: FeatureExtractor) -> LossTerms:
    gm = gt_mask.data if isinstance(gt_mask, Tensor) else np.asarray(gt_mask, dtype=np.float32)
    gt = (gt_rgb.data if isinstance(gt_rgb, Tensor) else np.asarray(gt_rgb)) * gm
    li = image_loss(pred_rgb, Tensor(gt), fx)
    lm = mask_loss(P, gm)
    total = ad.add(ad.mul(li, weights.image_weight), ad.mul(lm, weights.mask_weight))
    return LossTerms(total, li, lm)


def total_loss(pred_rgb, P, gt_rgb, gt_mask, weights: LossWeights, fx: FeatureExtractor) -> Tensor:
    """image_weight * image_loss + mask_weight * mask_loss, ground truth background blacked out."""
    return loss_terms(pred_rgb, P, gt_rgb, gt_mask, weights, fx).total
