"""The full finite-difference gradient suite (every differentiable op plus end to end).

All checks run in float64 with central differences at eps = 1e-3. Probe
coordinates come from :func:`smooth_probes`, so a piecewise-linear kink
inside [-eps, eps] never masquerades as a gradient error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .generator import GeneratorConfig, build_generator, generator_forward
from .gradcheck import GradCheckResult, check_gradients, smooth_probes
from .losses import FeatureExtractor, LossWeights, image_loss, mask_loss, total_loss
from .renderer import bilinear_sample, composite, sample_texture


@dataclass
class SuiteEntry:
    result: GradCheckResult
    rejected: int

    @property
    def ok(self) -> bool:
        return self.result.ok and len(self.result.probes) > 0


def _run(name, loss_fn, tensors, n_probes, eps, rtol, seed) -> SuiteEntry:
    indices, rejected = {}, 0
    for i, t in enumerate(tensors):
        found, r = smooth_probes(loss_fn, t, n_probes, eps=eps, seed=seed + i)
        indices[i] = found
        rejected += r
    return SuiteEntry(check_gradients(name, loss_fn, tensors, eps=eps, rtol=rtol, indices=indices), rejected)


def _simplex(rng, k, shape):
    x = rng.exponential(size=(k, *shape))
    return x / x.sum(axis=0, keepdims=True)


def _proj(rng, out: Tensor) -> np.ndarray:
    return rng.standard_normal(out.shape)


def op_cases(rng: np.random.Generator) -> list[tuple[str, Callable[[], Tensor], list[Tensor]]]:
    """(name, loss_fn, tensors) for every primitive and composite op."""
    T = lambda *s: Tensor(rng.standard_normal(s))
    U = lambda lo, hi, *s: Tensor(rng.uniform(lo, hi, size=s))
    cases = []

    x, w, b = T(1, 3, 7, 7), T(4, 3, 3, 3), T(4)
    p1 = rng.standard_normal((1, 4, 4, 4))
    cases.append(("conv2d", lambda: ad.tensor_sum(ad.mul(ad.conv2d(x, w, b, 2, 1), p1)), [x, w, b]))

    xt, wt, bt = T(1, 3, 4, 4), T(3, 2, 4, 4), T(2)
    p2 = rng.standard_normal((1, 2, 8, 8))
    cases.append(("conv2d_transpose",
                  lambda: ad.tensor_sum(ad.mul(ad.conv2d_transpose(xt, wt, bt, 2, 1), p2)), [xt, wt, bt]))

    z = T(1, 5, 3, 3)
    p3 = rng.standard_normal((1, 5, 3, 3))
    cases.append(("channel_softmax", lambda: ad.tensor_sum(ad.mul(ad.channel_softmax(z), p3)), [z]))

    s = T(2, 3, 3)
    p4 = rng.standard_normal((2, 3, 3))
    cases.append(("scaled_sigmoid", lambda: ad.tensor_sum(ad.mul(ad.scaled_sigmoid(s, 32.0), p4)), [s]))

    r = T(3, 4)
    p5 = rng.standard_normal((3, 4))
    cases.append(("relu", lambda: ad.tensor_sum(ad.mul(ad.relu(r), p5)), [r]))

    xn, g, be = T(1, 3, 4, 4), T(3), T(3)
    p6 = rng.standard_normal((1, 3, 4, 4))
    cases.append(("instance_norm", lambda: ad.tensor_sum(ad.mul(ad.instance_norm(xn, g, be), p6)), [xn, g, be]))

    a, c = T(3, 4), T(4)
    p7 = rng.standard_normal((3, 4))
    cases.append(("add_mul", lambda: ad.tensor_sum(ad.mul(ad.mul(ad.add(a, c), a), p7)), [a, c]))

    l1a, l1b = T(2, 5), T(2, 5)
    cases.append(("l1_distance", lambda: ad.l1_distance(l1a, l1b), [l1a, l1b]))

    pb, tb = U(0.05, 0.95, 3, 4), rng.uniform(size=(3, 4))
    cases.append(("binary_cross_entropy", lambda: ad.binary_cross_entropy(pb, Tensor(tb)), [pb]))

    lg = U(0.2, 2.0, 6)
    p8 = rng.standard_normal(6)
    cases.append(("log", lambda: ad.tensor_sum(ad.mul(ad.log(lg), p8)), [lg]))

    tk = T(4, 3, 2)
    p9 = rng.standard_normal((2, 6))
    cases.append(("take_reshape_mean",
                  lambda: ad.add(ad.tensor_sum(ad.mul(ad.reshape(ad.take(tk, slice(1, 3)), (2, 6)), p9)),
                                 ad.mean(tk)), [tk]))

    tex, uu, vv = U(0, 1, 3, 6, 6), U(0.2, 4.8, 8), U(0.2, 4.8, 8)
    p10 = rng.standard_normal((3, 8))
    cases.append(("bilinear_sample", lambda: ad.tensor_sum(ad.mul(bilinear_sample(tex, uu, vv), p10)), [tex, uu, vv]))

    n, tw = 3, 6
    P = Tensor(_simplex(rng, n + 1, (5, 5)))
    C = U(0.7, tw - 0.7, 2 * n, 5, 5)
    TT = U(0, 1, n, 3, tw, tw)
    p11 = rng.standard_normal((3, 5, 5))
    cases.append(("sample_texture", lambda: ad.tensor_sum(ad.mul(sample_texture(P, C, TT), p11)), [P, C, TT]))

    I, M, bg = U(0, 1, 3, 4, 4), U(0, 1, 1, 4, 4), U(0, 1, 3, 4, 4)
    p12 = rng.standard_normal((3, 4, 4))
    cases.append(("composite", lambda: ad.tensor_sum(ad.mul(composite(I, M, bg), p12)), [I, M, bg]))

    fx = FeatureExtractor(widths=(4, 4, 4, 4, 4), seed=3)
    ia, ib = U(0, 1, 3, 16, 16), rng.uniform(size=(3, 16, 16))
    cases.append(("image_loss", lambda: image_loss(ia, ib, fx), [ia]))

    Pm = Tensor(_simplex(rng, 3, (6, 6)))
    gm = (rng.uniform(size=(1, 6, 6)) > 0.5).astype(float)
    cases.append(("mask_loss", lambda: mask_loss(Pm, gm), [Pm]))

    gcfg = GeneratorConfig(input_channels=4, n_parts=3, texture_side=8, base_channels=4, res_channels=8,
                           n_down=2, n_resblocks=1)
    gen = build_generator(gcfg, seed=1)
    Bg = rng.uniform(size=(4, 8, 8))
    rp, rc = rng.standard_normal((4, 8, 8)), rng.standard_normal((6, 8, 8))

    def gen_loss():
        Pg, Cg = generator_forward(gen, Bg)
        return ad.add(ad.tensor_sum(ad.mul(Pg, rp)), ad.tensor_sum(ad.mul(Cg, rc)))

    cases.append(("generator_forward", gen_loss,
                  [gen.params[k] for k in ("p.out.weight", "c.out.weight", "enc.stem.weight")]))
    return cases


def end_to_end_case(rng: np.random.Generator, frame=None, bones=None):
    """Full training loss on a synthetic frame: texel, C-head weight, encoder weight."""
    if frame is None:
        from .synthetic import default_figure, generate_dataset
        from .pose import rasterize_bones

        fig = default_figure(texture_side=8, seed=0)
        frames, _ = generate_dataset(fig, n_cameras=2, n_poses=1, motion_seed=3, holdout_cameras=0, image_size=32)
        frame = frames[0]
        bones = rasterize_bones(frame.pose, fig.skeleton, 32, 32, 8.0)
    n = frame.p_star.shape[0] - 1
    w = 8
    gen = build_generator(GeneratorConfig.desk(bones.shape[0], n, w, n_resblocks=2), seed=0)
    T = Tensor(rng.uniform(size=(n, 3, w, w)), name="texel")
    fx = FeatureExtractor()

    def loss():
        P, C = generator_forward(gen, bones)
        return total_loss(sample_texture(P, C, T), P, frame.rgb, frame.mask, LossWeights(), fx)

    return "end_to_end", loss, [T, gen.params["c.out.weight"], gen.params["enc.down1.weight"]]


def run_suite(seed: int = 0, eps: float = 1e-3, rtol: float = 1e-2, n_probes: int = 5,
              include_end_to_end: bool = True) -> list[SuiteEntry]:
    rng = np.random.default_rng(seed)
    entries = []
    with ad.precision(np.float64):
        cases = op_cases(rng)
        if include_end_to_end:
            cases.append(end_to_end_case(rng))
        for name, fn, tensors in cases:
            for t in tensors:
                t.requires_grad = True
            entries.append(_run(name, fn, tensors, n_probes, eps, rtol, seed))
    return entries
