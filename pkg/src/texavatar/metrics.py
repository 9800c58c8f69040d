"""Structural similarity with an 11x11 Gaussian window (valid positions only)."""

from __future__ import annotations

import numpy as np


def gaussian_1d(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g1: np.ndarray) -> np.ndarray:
    # separable correlation over the last two axes, no padding
    k = len(g1)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g1
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g1


def ssim_map(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
             data_range: float = 1.0) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")
    g1 = gaussian_1d(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g1), _filter_valid(b, g1)
    saa = _filter_valid(a * a, g1) - mu_a**2
    sbb = _filter_valid(b * b, g1) - mu_b**2
    sab = _filter_valid(a * b, g1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, **kw) -> float:
    """Mean SSIM over channels and valid window positions of two (C, H, W) images."""
    return float(ssim_map(a, b, **kw).mean())
