"""Fixed-seed synthetic experiments: overfit, texture recovery, hold-out generalization.

Each function returns a plain dict report so scripts can dump it as JSON and
tests can assert on it.
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .dataset import Dataset
from .losses import FeatureExtractor, image_loss
from .metrics import ssim
from .renderer import clamp_textures, sample_texture
from .synthetic import SyntheticFigure, default_figure, generate_dataset
from .train import TrainConfig, evaluate, render, train


def observed_texels(frames, n_parts: int, texture_side: int) -> np.ndarray:
    """(n, w, w) boolean map of texels nearest to at least one foreground oracle pixel."""
    w = texture_side
    seen = np.zeros((n_parts, w, w), dtype=bool)
    for f in frames:
        part = f.p_star.argmax(axis=0)
        fg = part < n_parts
        k = np.where(fg, part, 0)
        cu = np.take_along_axis(f.c_star[0::2], k[None], axis=0)[0][fg]
        cv = np.take_along_axis(f.c_star[1::2], k[None], axis=0)[0][fg]
        i = np.clip(np.floor(cu).astype(np.int64), 0, w - 1)
        j = np.clip(np.floor(cv).astype(np.int64), 0, w - 1)
        seen[part[fg], i, j] = True
    return seen


def overfit(
    steps: int = 2000,
    config: TrainConfig | None = None,
    figure: SyntheticFigure | None = None,
    motion_seed: int = 1,
    on_record=None,
) -> dict:
    """Train the desk config on a single synthetic frame and re-render it."""
    figure = figure or default_figure()
    frames, split = generate_dataset(figure, n_cameras=2, n_poses=1, motion_seed=motion_seed, holdout_cameras=0)
    ds = Dataset.from_frames(frames[:1], figure.skeleton, split, figure.n_parts, figure.texture_side, 8.0)
    config = replace(config or TrainConfig(), steps=steps, frame_indices=[0])
    t0 = time.perf_counter()
    result = train(config, ds, on_record=on_record)
    runtime = time.perf_counter() - t0
    main = [r["image_loss"] for r in result.metrics if r["phase"] == "main"]
    f = frames[0]
    score = ssim(render(result.checkpoint, f.pose), f.rgb * f.mask)
    first_below = next((i for i, v in enumerate(main) if v < 0.2 * main[0]), None)
    return {
        "steps": steps,
        "seed": config.seed,
        "initial_image_loss": main[0],
        "final_image_loss": main[-1],
        "ratio": main[-1] / main[0],
        "first_step_below_20pct": first_below,
        "ssim": score,
        "runtime_s": runtime,
        "checkpoint": result.checkpoint,
        "curve": main,
    }


def texture_recovery(
    n_cameras: int = 4,
    n_poses: int = 30,
    steps: int = 1500,
    lr: float = 0.01,
    init_value: float = 0.5,
    seed: int = 0,
    motion_seed: int = 3,
    figure: SyntheticFigure | None = None,
) -> dict:
    """Learn textures from oracle renders with the UV maps frozen at oracle values."""
    figure = figure or default_figure()
    n, w = figure.n_parts, figure.texture_side
    frames, _ = generate_dataset(figure, n_cameras, n_poses, motion_seed=motion_seed, holdout_cameras=0)
    seen = observed_texels(frames, n, w)
    T = Tensor(np.full((n, 3, w, w), init_value), requires_grad=True, name="textures")
    opt = Adam({"textures": T}, lr=lr)
    fx = FeatureExtractor()
    rng = np.random.default_rng(seed)
    frozen = [(Tensor(f.p_star), Tensor(f.c_star), f.rgb * f.mask) for f in frames]
    t0 = time.perf_counter()
    losses = []
    for _ in range(steps):
        P, C, target = frozen[rng.integers(len(frozen))]
        opt.zero_grad()
        loss = image_loss(sample_texture(P, C, T), target, fx)
        ad.backward(loss)
        opt.step()
        clamp_textures(T)
        losses.append(float(loss.data))
    err = np.abs(T.data - figure.textures).mean(axis=1)
    return {
        "steps": steps,
        "frames": len(frames),
        "observed_fraction": float(seen.mean()),
        "mean_l1_observed": float(err[seen].mean()),
        "mean_l1_initial": float(np.abs(init_value - figure.textures).mean(axis=1)[seen].mean()),
        "runtime_s": time.perf_counter() - t0,
        "losses": losses,
    }


def generalization(
    n_poses: int = 50,
    steps: int = 3000,
    config: TrainConfig | None = None,
    motion_seed: int = 7,
    figure: SyntheticFigure | None = None,
    on_record=None,
) -> dict:
    """4 training cameras, 1 interior hold-out camera, final 20% of the motion held out.

    The baseline is the same pipeline with zero main-loop steps (pretrained
    generator plus initialized textures).
    """
    figure = figure or default_figure()
    frames, split = generate_dataset(figure, n_cameras=5, n_poses=n_poses, motion_seed=motion_seed)
    ds = Dataset.from_frames(frames, figure.skeleton, split, figure.n_parts, figure.texture_side, 8.0)
    config = config or TrainConfig()
    t0 = time.perf_counter()
    base = train(replace(config, steps=0), ds)
    base_test = evaluate(base.checkpoint, ds, "test")
    trained = train(replace(config, steps=steps), ds, on_record=on_record)
    trained_test = evaluate(trained.checkpoint, ds, "test")
    return {
        "split": split.to_dict(),
        "n_train_frames": len(ds.indices("train")),
        "n_test_frames": len(ds.indices("test")),
        "steps": steps,
        "baseline_test_ssim": base_test["mean_ssim"],
        "trained_test_ssim": trained_test["mean_ssim"],
        "improvement": trained_test["mean_ssim"] - base_test["mean_ssim"],
        "trained_train_ssim": evaluate(trained.checkpoint, ds, "train")["mean_ssim"],
        "runtime_s": time.perf_counter() - t0,
        "dataset": ds,
    }
