"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, backward, no_grad


@dataclass
class ProbeResult:
    tensor: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        return relative_error(self.analytic, self.numeric)


@dataclass
class GradCheckResult:
    name: str
    probes: list[ProbeResult] = field(default_factory=list)
    rtol: float = 1e-2

    @property
    def max_rel_error(self) -> float:
        return max((p.rel_error for p in self.probes), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.rtol

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {len(self.probes)} probes, max rel err {self.max_rel_error:.2e}"


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    # both essentially zero counts as agreement
    if abs(a - b) <= floor:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), floor)


def numerical_derivative(loss_fn: Callable[[], Tensor], t: Tensor, index, eps: float = 1e-3) -> float:
    old = t.data[index]
    with no_grad():
        t.data[index] = old + eps
        plus = float(loss_fn().data)
        t.data[index] = old - eps
        minus = float(loss_fn().data)
    t.data[index] = old
    return (plus - minus) / (2 * eps)


def _kink_indicators(loss_fn, t: Tensor, index, eps: float) -> tuple[list[float], float]:
    """Central slopes at eps, eps/2, eps/4 and a curvature mismatch, from seven loss samples."""
    old = t.data[index]
    f = {}
    with no_grad():
        for k in (-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0):
            t.data[index] = old + k * eps
            f[k] = float(loss_fn().data)
    t.data[index] = old
    slopes = [(f[k] - f[-k]) / (2 * k * eps) for k in (1.0, 0.5, 0.25)]
    h = eps / 2
    # second differences agree to O(eps^2) when smooth; a kink of slope jump J at the
    # probe point gives J/eps and J/h, so the scaled mismatch is J/2
    d1 = (f[1.0] - 2 * f[0.0] + f[-1.0]) / eps**2
    d2 = (f[0.5] - 2 * f[0.0] + f[-0.5]) / h**2
    return slopes, abs(d1 - d2) * h


def smooth_probes(
    loss_fn: Callable[[], Tensor],
    t: Tensor,
    n: int,
    eps: float = 1e-3,
    seed: int = 0,
    tol: float = 3e-3,
    max_tries: int = 200,
) -> tuple[list[tuple[int, ...]], int]:
    """Coordinates of ``t`` at which the loss is smooth over [-eps, eps].

    From samples at 0, +-eps/4, +-eps/2 and +-eps a coordinate qualifies when
    the central differences at all three step sizes agree and the second
    differences at eps and eps/2 agree (scaled by eps/2), each to ``tol``
    relative to the slope. All of these hold to O(eps^2) for a smooth
    function. A single ReLU, L1 or texel-cell kink breaks the curvature test;
    many small kinks spread through the interval make the slope drift as the
    step shrinks, which the three-step comparison catches. The analytic
    gradient plays no part in the test. Returns (coordinates, number of
    candidates rejected).
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(t.data.size)[:max_tries]
    found, rejected = [], 0
    for f in order:
        idx = tuple(int(v) for v in np.unravel_index(f, t.shape))
        slopes, curv = _kink_indicators(loss_fn, t, idx, eps)
        scale = max(max(abs(c) for c in slopes), 1e-8)
        agree = all(relative_error(slopes[0], c) <= tol for c in slopes[1:])
        if agree and curv / scale <= tol:
            found.append(idx)
            if len(found) == n:
                break
        else:
            rejected += 1
    return found, rejected


def check_gradients(
    name: str,
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    n_probes: int = 5,
    eps: float = 1e-3,
    rtol: float = 1e-2,
    seed: int = 0,
    indices: dict[int, Sequence[tuple[int, ...]]] | None = None,
) -> GradCheckResult:
    """Compare tape gradients against central differences at random coordinates.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of ``tensors``
    on every call. ``indices`` optionally pins probe coordinates per tensor position.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    backward(loss_fn())
    analytic = [t.grad.copy() for t in tensors]
    result = GradCheckResult(name, rtol=rtol)
    for pos, t in enumerate(tensors):
        if indices is not None and pos in indices:
            probe_idx = [tuple(i) for i in indices[pos]]
        else:
            flat = rng.choice(t.data.size, size=min(n_probes, t.data.size), replace=False)
            probe_idx = [tuple(int(v) for v in np.unravel_index(f, t.shape)) for f in flat]
        for idx in probe_idx:
            num = numerical_derivative(loss_fn, t, idx, eps)
            result.probes.append(ProbeResult(t.name or f"input{pos}", idx, float(analytic[pos][idx]), num))
    for t in tensors:
        t.grad = None
    return result
