"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError
from .tensor import Tensor, no_grad


def numerical_gradient(f: Callable[[], Tensor], param: Tensor, eps: float, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``param`` (perturbed in place)."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        with no_grad():
            up = float(f().data)
        flat[i] = old - eps
        with no_grad():
            down = float(f().data)
        flat[i] = old
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite loss while perturbing coordinate {i}")
        grad.reshape(-1)[i] = (up - down) / (2 * eps)
    return grad


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    floor: float = 1e-3,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest per-coordinate relative error between backprop and central differences.

    The relative error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps coordinates whose true gradient is ~0 from dividing
    rounding noise by zero. With ``max_coords`` each parameter is checked on a
    seeded random subset of that many coordinates.
    """
    if any(p.data.dtype != np.float64 for p in params):
        raise NumericError("grad_check needs 64-bit parameters; build them under precision(64)")
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    loss.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        coords = None
        if max_coords is not None and p.data.size > max_coords:
            coords = np.sort(rng.choice(p.data.size, size=max_coords, replace=False))
        numeric = numerical_gradient(f, p, eps, coords)
        a = analytic.reshape(-1)
        n = numeric.reshape(-1)
        if coords is not None:
            a, n = a[coords], n[coords]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
