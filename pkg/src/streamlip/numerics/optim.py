"""Adam with a multiplicative per-update learning-rate decay."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .functional import global_norm_clip
from .tensor import Tensor


class Adam:
    """Adam over a fixed list of parameters.

    The learning rate used for update ``j`` (0-based) is ``lr0 * shrink**j``.
    Parameters whose ``grad`` is ``None`` are skipped, so frozen parameters
    keep their exact bytes.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr0: float = 5e-4,
        shrink: float = 0.99,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: float | None = 5.0,
    ):
        if not 0 < shrink <= 1:
            raise ValueError(f"shrink must lie in (0, 1], got {shrink}")
        self.params = list(params)
        self.lr0 = lr0
        self.shrink = shrink
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.steps = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = [0] * len(self.params)

    @property
    def lr(self) -> float:
        """Learning rate the next update will use."""
        return self.lr0 * self.shrink**self.steps

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one update; returns the (pre-clip) global gradient norm."""
        live = [i for i, p in enumerate(self.params) if p.grad is not None]
        grads = [self.params[i].grad for i in live]
        norm = global_norm_clip(grads, self.clip_norm) if self.clip_norm else 0.0
        lr = self.lr
        b1, b2 = self.betas
        for i, g in zip(live, grads):
            p = self.params[i]
            self._t[i] += 1
            t = self._t[i]
            self._m[i] = b1 * self._m[i] + (1 - b1) * g
            self._v[i] = b2 * self._v[i] + (1 - b2) * g * g
            mhat = self._m[i] / (1 - b1**t)
            vhat = self._v[i] / (1 - b2**t)
            p.data = (p.data - lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype, copy=False)
        self.steps += 1
        return norm
