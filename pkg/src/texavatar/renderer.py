"""Differentiable texture lookup and foreground compositing.

Coordinate convention: a coordinate ``c`` in [0, w] addresses the lattice
position ``c - 0.5``, so ``c = i + 0.5`` hits texel ``i`` exactly. Lookups
outside the lattice clamp to the edge texel.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, record


def _corners(u: np.ndarray, v: np.ndarray, w: int):
    """Clamped lattice coords -> (i0, j0, fu, fv, inside_u, inside_v)."""
    inside_u = (u > 0) & (u < w - 1)
    inside_v = (v > 0) & (v < w - 1)
    u = np.clip(u, 0, w - 1)
    v = np.clip(v, 0, w - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), w - 2)
    j0 = np.minimum(np.floor(v).astype(np.int64), w - 2)
    return i0, j0, u - i0, v - j0, inside_u, inside_v


def bilinear_sample(texture, u, v) -> Tensor:
    """Bilinear lookup of a (3, w, w) texture at lattice coordinates (u, v).

    ``u`` indexes rows and ``v`` columns; integer (u, v) returns that texel.
    ``u`` and ``v`` may be scalars or equally shaped arrays/tensors; the
    result has shape (3, *u.shape) and is differentiable in all three inputs.
    """
    texture, u, v = as_tensor(texture), as_tensor(u), as_tensor(v)
    c, w, w2 = texture.shape
    if w != w2 or w < 2:
        raise ValueError(f"texture must be (C, w, w) with w >= 2, got {texture.shape}")
    if u.shape != v.shape:
        raise ValueError(f"u and v shapes differ: {u.shape} vs {v.shape}")
    T = texture.data
    i0, j0, fu, fv, inu, inv = _corners(u.data, v.data, w)
    t00, t01 = T[:, i0, j0], T[:, i0, j0 + 1]
    t10, t11 = T[:, i0 + 1, j0], T[:, i0 + 1, j0 + 1]
    w00, w01 = (1 - fu) * (1 - fv), (1 - fu) * fv
    w10, w11 = fu * (1 - fv), fu * fv
    out = w00 * t00 + w01 * t01 + w10 * t10 + w11 * t11

    def bw(g):
        dT = None
        if texture.requires_grad:
            dT = np.zeros_like(T)
            for (ii, jj), wt in (((i0, j0), w00), ((i0, j0 + 1), w01), ((i0 + 1, j0), w10), ((i0 + 1, j0 + 1), w11)):
                flat = (ii * w + jj).reshape(-1)
                for ch in range(c):
                    dT[ch] += np.bincount(flat, weights=(g[ch] * wt).reshape(-1), minlength=w * w).reshape(w, w)
        du = ((1 - fv) * (t10 - t00) + fv * (t11 - t01)) * g
        dv = ((1 - fu) * (t01 - t00) + fu * (t11 - t10)) * g
        du = np.where(inu, du.sum(axis=0), 0).astype(u.data.dtype)
        dv = np.where(inv, dv.sum(axis=0), 0).astype(v.data.dtype)
        return dT, du, dv

    return record(out, (texture, u, v), bw)


def sample_texture(P: Tensor, C: Tensor, T: Tensor) -> Tensor:
    """Per pixel: sum over parts k < n of P[k] * T[k] looked up at (C[2k], C[2k+1]).

    P is (n+1, H, W), C is (2n, H, W), T is (n, 3, w, w). The background
    channel P[n] adds no colour.
    """
    P, C, T = as_tensor(P), as_tensor(C), as_tensor(T)
    n = T.shape[0]
    if T.ndim != 4 or T.shape[1] != 3 or T.shape[2] != T.shape[3]:
        raise ValueError(f"texture set must be (n, 3, w, w), got {T.shape}")
    if P.ndim != 3 or C.ndim != 3 or P.shape[0] != n + 1 or C.shape[0] != 2 * n or P.shape[1:] != C.shape[1:]:
        raise ValueError(f"part count mismatch: P {P.shape}, C {C.shape}, T {T.shape}")
    w = T.shape[2]
    if w < 2:
        raise ValueError("texture side must be >= 2")
    _, h, wd = P.shape
    Pd, Td = P.data[:n], T.data
    u = C.data[0::2] - 0.5  # (n, H, W)
    v = C.data[1::2] - 0.5
    i0, j0, fu, fv, inu, inv = _corners(u, v, w)
    k = np.arange(n)[:, None, None]
    base = k * (w * w)
    idx = (base + i0 * w + j0, base + i0 * w + j0 + 1, base + (i0 + 1) * w + j0, base + (i0 + 1) * w + j0 + 1)
    wts = ((1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv)
    Tflat = Td.transpose(1, 0, 2, 3).reshape(3, -1)  # (3, n*w*w)
    corners = [Tflat[:, ix] for ix in idx]  # each (3, n, H, W)
    vals = sum(wt * cv for wt, cv in zip(wts, corners))  # (3, n, H, W)
    out = (Pd * vals).sum(axis=1)

    def bw(g):
        # g: (3, H, W)
        dP = np.zeros_like(P.data)
        dP[:n] = (g[:, None] * vals).sum(axis=0)
        dT = None
        if T.requires_grad:
            gk = g[:, None] * Pd  # (3, n, H, W)
            acc = np.zeros((3, n * w * w), dtype=np.float64)
            for ix, wt in zip(idx, wts):
                flat = ix.reshape(-1)
                for ch in range(3):
                    acc[ch] += np.bincount(flat, weights=(gk[ch] * wt).reshape(-1), minlength=n * w * w)
            dT = acc.reshape(3, n, w, w).transpose(1, 0, 2, 3).astype(Td.dtype)
        dC = None
        if C.requires_grad:
            t00, t01, t10, t11 = corners
            gsum = g[:, None] * Pd
            du = (((1 - fv) * (t10 - t00) + fv * (t11 - t01)) * gsum).sum(axis=0)
            dv = (((1 - fu) * (t01 - t00) + fu * (t11 - t10)) * gsum).sum(axis=0)
            dC = np.empty_like(C.data)
            dC[0::2] = np.where(inu, du, 0)
            dC[1::2] = np.where(inv, dv, 0)
        return dP, dC, dT

    return record(out, (P, C, T), bw)


def foreground_mask(P: Tensor) -> Tensor:
    """M = 1 - P[n] as a (1, H, W) tensor."""
    n = P.shape[0] - 1
    return ad.sub(1.0, ad.take(P, slice(n, n + 1)))


def composite(image: Tensor, mask: Tensor, background=None) -> Tensor:
    """``image * mask + background * (1 - mask)``; black background when omitted."""
    image, mask = as_tensor(image), as_tensor(mask)
    if mask.ndim != 3 or mask.shape[0] != 1 or mask.shape[1:] != image.shape[1:]:
        raise ValueError(f"mask {mask.shape} does not match image {image.shape}")
    fg = ad.mul(image, mask)
    if background is None:
        return fg
    background = as_tensor(background)
    if background.shape != image.shape:
        raise ValueError(f"background {background.shape} does not match image {image.shape}")
    return ad.add(fg, ad.mul(background, ad.sub(1.0, mask)))


def clamp_textures(T: Tensor) -> None:
    """Project texels back onto [0, 1] in place (outside the graph)."""
    np.clip(T.data, 0.0, 1.0, out=T.data)
