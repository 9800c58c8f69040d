"""Pose-to-UV translation network with a shared encoder and two decoders.

Encoder: 7x7 stem, ``n_down`` stride-2 4x4 convs, residual trunk at
``res_channels``. Each head mirrors the downsampling with stride-2 4x4
transposed convs and ends in a 7x7 conv. The assignment head is softmaxed
over ``n_parts + 1`` channels, the coordinate head is squashed into (0, w).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class GeneratorConfig:
    input_channels: int
    n_parts: int = 24
    texture_side: int = 256
    base_channels: int = 32
    res_channels: int = 256
    n_down: int = 4
    n_resblocks: int = 6
    # residual blocks kept in the shared trunk; the rest are duplicated per head
    shared_resblocks: int | None = None
    stem_kernel: int = 7

    def __post_init__(self):
        if self.n_down < 1:
            raise ValueError("n_down must be >= 1")
        for field in ("input_channels", "n_parts", "base_channels", "res_channels"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.texture_side < 2:
            raise ValueError("texture_side must be >= 2")
        if self.n_resblocks < 0:
            raise ValueError("n_resblocks must be >= 0")
        if self.shared_resblocks is not None and not 0 <= self.shared_resblocks <= self.n_resblocks:
            raise ValueError("shared_resblocks must lie in [0, n_resblocks]")
        if self.stem_kernel % 2 != 1:
            raise ValueError("stem_kernel must be odd")

    @classmethod
    def full(cls, input_channels: int = 70) -> "GeneratorConfig":
        return cls(input_channels=input_channels, n_parts=24, texture_side=256, base_channels=32,
                   res_channels=256, n_down=4, n_resblocks=9)

    @classmethod
    def desk(cls, input_channels: int, n_parts: int, texture_side: int = 32, **kw) -> "GeneratorConfig":
        kw = {"base_channels": 8, "res_channels": 32, "n_down": 2, **kw}
        return cls(input_channels=input_channels, n_parts=n_parts, texture_side=texture_side, **kw)

    @property
    def n_shared(self) -> int:
        return self.n_resblocks if self.shared_resblocks is None else self.shared_resblocks

    def level_channels(self) -> list[int]:
        """Channel width after the stem (index 0) and after each downsampling."""
        chans = [min(self.base_channels * 2**i, self.res_channels) for i in range(self.n_down)]
        return chans + [self.res_channels]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


class Generator:
    def __init__(self, config: GeneratorConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params

    def __call__(self, bones):
        return generator_forward(self, bones)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def copy(self) -> "Generator":
        return Generator(self.config, OrderedDict((k, Tensor(v.data, requires_grad=v.requires_grad, name=k))
                                                  for k, v in self.params.items()))

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.params.items())


def _layer_shapes(cfg: GeneratorConfig) -> "OrderedDict[str, tuple]":
    """Name -> (kind, shape) for every parameter, in a fixed order."""
    shapes: OrderedDict[str, tuple] = OrderedDict()
    chans = cfg.level_channels()

    def conv(name, cout, cin, k):
        shapes[f"{name}.weight"] = ("conv", (cout, cin, k, k))
        shapes[f"{name}.bias"] = ("bias", (cout,))

    def convt(name, cin, cout, k):
        shapes[f"{name}.weight"] = ("convt", (cin, cout, k, k))
        shapes[f"{name}.bias"] = ("bias", (cout,))

    def norm(name, c):
        shapes[f"{name}.gamma"] = ("gamma", (c,))
        shapes[f"{name}.beta"] = ("beta", (c,))

    def resblock(name, c):
        conv(f"{name}.conv1", c, c, 3)
        norm(f"{name}.norm1", c)
        conv(f"{name}.conv2", c, c, 3)
        norm(f"{name}.norm2", c)

    k = cfg.stem_kernel
    conv("enc.stem", chans[0], cfg.input_channels, k)
    norm("enc.stem_norm", chans[0])
    for i in range(cfg.n_down):
        conv(f"enc.down{i}", chans[i + 1], chans[i], 4)
        norm(f"enc.down{i}_norm", chans[i + 1])
    for r in range(cfg.n_shared):
        resblock(f"trunk.res{r}", cfg.res_channels)
    for head, out_c in (("p", cfg.n_parts + 1), ("c", 2 * cfg.n_parts)):
        for r in range(cfg.n_shared, cfg.n_resblocks):
            resblock(f"{head}.res{r}", cfg.res_channels)
        for i in reversed(range(cfg.n_down)):
            convt(f"{head}.up{i}", chans[i + 1], chans[i], 4)
            norm(f"{head}.up{i}_norm", chans[i])
        conv(f"{head}.out", out_c, chans[0], k)
    return shapes


def build_generator(config: GeneratorConfig, seed: int = 0) -> Generator:
    """Fresh parameters with He-normal (fan-in) weights, zero biases, unit gammas."""
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, (kind, shape) in _layer_shapes(config).items():
        if kind == "conv":
            fan_in = shape[1] * shape[2] * shape[3]
            arr = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif kind == "convt":
            # each output pixel of a stride-2 k4 transposed conv sees cin * (k/2)^2 inputs
            fan_in = shape[0] * shape[2] * shape[3] / 4
            arr = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif kind == "gamma":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return Generator(config, params)


def _conv_norm_relu(x, p, conv, norm, stride=1, padding=0, transpose=False):
    op = ad.conv2d_transpose if transpose else ad.conv2d
    x = op(x, p[f"{conv}.weight"], p[f"{conv}.bias"], stride=stride, padding=padding)
    x = ad.instance_norm(x, p[f"{norm}.gamma"], p[f"{norm}.beta"])
    return ad.relu(x)


def _resblock(x, p, name):
    h = _conv_norm_relu(x, p, f"{name}.conv1", f"{name}.norm1", padding=1)
    h = ad.conv2d(h, p[f"{name}.conv2.weight"], p[f"{name}.conv2.bias"], padding=1)
    h = ad.instance_norm(h, p[f"{name}.norm2.gamma"], p[f"{name}.norm2.beta"])
    return ad.add(x, h)


def _head(x, gen: Generator, head: str) -> Tensor:
    cfg, p = gen.config, gen.params
    for r in range(cfg.n_shared, cfg.n_resblocks):
        x = _resblock(x, p, f"{head}.res{r}")
    for i in reversed(range(cfg.n_down)):
        x = _conv_norm_relu(x, p, f"{head}.up{i}", f"{head}.up{i}_norm", stride=2, padding=1, transpose=True)
    return ad.conv2d(x, p[f"{head}.out.weight"], p[f"{head}.out.bias"], padding=cfg.stem_kernel // 2)


def generator_forward(gen: Generator, bones) -> tuple[Tensor, Tensor]:
    """Bone stack (J, H, W) -> part assignments (n+1, H, W) and coordinates (2n, H, W)."""
    cfg, p = gen.config, gen.params
    b = bones if isinstance(bones, Tensor) else Tensor(bones)
    if b.ndim != 3 or b.shape[0] != cfg.input_channels:
        raise ValueError(f"expected bone stack ({cfg.input_channels}, H, W), got {b.shape}")
    _, h, w = b.shape
    f = 2**cfg.n_down
    if h % f or w % f:
        raise ValueError(f"spatial size {h}x{w} is not divisible by 2^n_down = {f}")
    x = ad.reshape(b, (1, *b.shape))
    x = _conv_norm_relu(x, p, "enc.stem", "enc.stem_norm", padding=cfg.stem_kernel // 2)
    for i in range(cfg.n_down):
        x = _conv_norm_relu(x, p, f"enc.down{i}", f"enc.down{i}_norm", stride=2, padding=1)
    for r in range(cfg.n_shared):
        x = _resblock(x, p, f"trunk.res{r}")
    logits = _head(x, gen, "p")
    coords = _head(x, gen, "c")
    probs = ad.channel_softmax(logits)
    coords = ad.scaled_sigmoid(coords, float(cfg.texture_side))
    return ad.reshape(probs, probs.shape[1:]), ad.reshape(coords, coords.shape[1:])
