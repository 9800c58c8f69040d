"""Small reverse-mode autodiff engine over numpy arrays.

Only the operators the avatar pipeline needs are provided. Every op records a
closure on the active :class:`Tape`; :func:`backward` replays the tape in
reverse and accumulates gradients into the leaf tensors.

Storage is float32 by default. Reductions accumulate in float64. Gradient
checks switch the whole engine to float64 with :func:`precision`.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

_local = threading.local()


def default_dtype() -> type:
    return getattr(_local, "dtype", np.float32)


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the storage dtype of newly created tensors."""
    previous = default_dtype()
    _local.dtype = dtype
    try:
        yield
    finally:
        _local.dtype = previous


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


@dataclass
class _Record:
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of executed ops. One tape is used by one thread at a time."""

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def clear(self) -> None:
        for rec in self.records:
            rec.output._tape = None
        self.records.clear()


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = [Tape()]
    return stack


def current_tape() -> Tape:
    return _tape_stack()[-1]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=default_dtype(), copy=True, order="C")
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # no copy: used for op outputs that own their buffer
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=default_dtype())
        t.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        t.requires_grad = False
        t.grad = None
        t._tape = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)


def _raise_item(t: Tensor) -> float:
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result and log it on the current tape when gradients are needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per input.
    """
    out = Tensor._wrap(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = current_tape()
        tape.records.append(_Record(tuple(inputs), out, backward_fn))
        out._tape = tape
    return out


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Backpropagate from a scalar loss; fills ``.grad`` on requires_grad leaves.

    Returns the leaf gradients keyed by ``id(tensor)``. The tape is cleared.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("loss was not recorded on a tape (no input requires grad?)")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if not t.requires_grad:
                continue
            if t._tape is None:
                leaves[id(t)] = t
            if gi is None:
                continue
            if gi.shape != t.shape:
                raise RuntimeError(f"gradient shape {gi.shape} does not match input {t.shape}")
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else gi
    out = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        g = np.zeros_like(leaf.data) if g is None else g.astype(leaf.data.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        out[key] = leaf.grad
    tape.clear()
    return out


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return record(ad * bd, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return record(np.where(pos, x.data, 0), (x,), lambda g: (g * pos,))


def log(x: Tensor, eps: float = 0.0) -> Tensor:
    """Natural log of ``max(x, eps)``; zero gradient where the floor is active."""
    inside = x.data > eps
    safe = np.maximum(x.data, eps) if eps > 0 else x.data
    return record(np.log(safe), (x,), lambda g: (np.where(inside, g / safe, 0),))


def scaled_sigmoid(x: Tensor, scale: float) -> Tensor:
    """``scale * sigmoid(x)``; outputs lie strictly inside (0, scale) for moderate x."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)
    return record(scale * s, (x,), lambda g: (g * scale * s * (1.0 - s),))


def channel_softmax(x: Tensor) -> Tensor:
    """Softmax over axis 1 of an NCHW tensor (max-subtracted)."""
    if x.ndim != 4:
        raise ValueError(f"channel_softmax expects NCHW input, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return record(p, (x,), bw)


# ---------------------------------------------------------------- shape / reductions


def take(x: Tensor, index) -> Tensor:
    """Basic (slice / integer) indexing with a scatter backward."""
    shape = x.shape
    out = np.array(x.data[index])

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return record(out, (x,), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape
    total = np.sum(x.data, dtype=np.float64)
    return record(np.array(total), (x,), lambda g: (np.full(shape, g, dtype=x.data.dtype),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    total = np.sum(x.data, dtype=np.float64) / n
    return record(np.array(total), (x,), lambda g: (np.full(shape, g / n, dtype=x.data.dtype),))


def l1_distance(a: Tensor, b) -> Tensor:
    """Mean absolute difference between two equally shaped tensors."""
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"l1_distance shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    value = np.sum(np.abs(diff), dtype=np.float64) / n

    def bw(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return record(np.array(value), (a, b), bw)


def binary_cross_entropy(p: Tensor, target, eps: float = 1e-7) -> Tensor:
    """Mean of ``-[t log p + (1-t) log(1-p)]`` with p clamped to [eps, 1-eps]."""
    t = as_tensor(target)
    if p.shape != t.shape:
        raise ValueError(f"binary_cross_entropy shape mismatch: {p.shape} vs {t.shape}")
    pd = p.data.astype(np.float64)
    inside = (pd > eps) & (pd < 1 - eps)
    pc = np.clip(pd, eps, 1 - eps)
    td = t.data.astype(np.float64)
    n = pd.size
    value = -np.sum(td * np.log(pc) + (1 - td) * np.log1p(-pc)) / n

    def bw(g):
        dp = np.where(inside, (-td / pc + (1 - td) / (1 - pc)) * (g / n), 0)
        dt = -(np.log(pc) - np.log1p(-pc)) * (g / n)
        return dp.astype(p.data.dtype), dt.astype(t.data.dtype)

    return record(np.array(value), (p, t), bw)


# ---------------------------------------------------------------- convolution


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """(N, C, H, W) -> (N, H'*W', C*kh*kw) patch matrix."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, C, ho, wo, kh, kw) -> (N, ho, wo, C, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`."""
    n, c, h, w = shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    patches = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += patches[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def _check_conv(op: str, x_shape, w_shape, channel_axis: int, stride: int, padding: int):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ValueError(f"{op}: expected 4-d input and weight, got input {x_shape} and weight {w_shape}")
    if x_shape[1] != w_shape[channel_axis]:
        raise ValueError(f"{op}: input {x_shape} channels do not match weight {w_shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"{op}: invalid stride {stride} / padding {padding}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation. ``weight`` is (Cout, Cin, kh, kw)."""
    _check_conv("conv2d", x.shape, weight.shape, 1, stride, padding)
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"conv2d: kernel {weight.shape} does not fit padded input {x.shape}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wm = weight.data.reshape(cout, -1)
    out = cols @ wm.T  # (N, ho*wo, Cout)
    if bias is not None:
        out += bias.data
    out = out.transpose(0, 2, 1).reshape(n, cout, ho, wo)

    def bw(g):
        gm = g.reshape(n, cout, ho * wo).transpose(0, 2, 1)  # (N, P, Cout)
        dw = np.einsum("npo,npk->ok", gm, cols).reshape(weight.shape) if weight.requires_grad else None
        dx = _col2im(gm @ wm, x.shape, kh, kw, stride, padding) if x.requires_grad else None
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (dx, dw, db) if bias is not None else (dx, dw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, inputs, bw)


def conv2d_transpose(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2, padding: int = 0
) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d` in its input.

    ``weight`` is (Cin, Cout, kh, kw), i.e. the weight of the conv2d it reverses.
    Output extent is ``(H - 1) * stride - 2 * padding + kh``.
    """
    _check_conv("conv2d_transpose", x.shape, weight.shape, 0, stride, padding)
    n, cin, h, w = x.shape
    _, cout, kh, kw = weight.shape
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d_transpose: input {x.shape} with weight {weight.shape} gives empty output")
    out_shape = (n, cout, ho, wo)
    wm = weight.data.reshape(cin, -1)
    xm = x.data.reshape(n, cin, h * w).transpose(0, 2, 1)  # (N, P, Cin)
    out = _col2im(xm @ wm, out_shape, kh, kw, stride, padding)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        cols, _, _ = _im2col(g, kh, kw, stride, padding)  # (N, P, Cout*kh*kw)
        dx = (cols @ wm.T).transpose(0, 2, 1).reshape(x.shape) if x.requires_grad else None
        dw = np.einsum("npi,npk->ik", xm, cols).reshape(weight.shape) if weight.requires_grad else None
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (dx, dw, db) if bias is not None else (dx, dw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, inputs, bw)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over H, W with affine (C,) parameters."""
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"instance_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    var = ((xd - mu) ** 2).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xd - mu) * inv).astype(xd.dtype)
    g_ = gamma.data[None, :, None, None]
    out = xhat * g_ + beta.data[None, :, None, None]

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * g_).astype(np.float64)
        m1 = dxhat.mean(axis=(2, 3), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
        dx = ((dxhat - m1 - xhat * m2) * inv).astype(xd.dtype)
        return dx, dgamma, dbeta

    return record(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------- optimizer


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; ``t`` is the 1-based step index.

    Returns new (param, m, v); the inputs are not modified.
    """
    b1, b2 = betas
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    mhat = m / (1 - b1**t)
    vhat = v / (1 - b2**t)
    param = param - lr * mhat / (np.sqrt(vhat) + eps)
    return param.astype(grad.dtype, copy=False), m, v


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 lrs: dict[str, float] | None = None):
        self.params = params
        self.lr = lr
        self.lrs = lrs or {}
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for k, p in self.params.items():
            if p.grad is None:
                continue
            new, self.m[k], self.v[k] = adam_step(
                p.data, p.grad, self.m[k], self.v[k], self.t, self.lrs.get(k, self.lr), self.betas, self.eps
            )
            p.data = new.astype(p.data.dtype, copy=False)
