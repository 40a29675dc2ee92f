"""Joint network: two-layer rectified combination of visual and LM states."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from ..layers import Linear, Module
from ..numerics import Tensor, log_softmax


class JointNetwork(Module):
    """``log_softmax(W2 relu(Wv h_v + Ww h_w + b1) + b2)``; inputs broadcast against each other."""

    def __init__(self, rng: np.random.Generator, d: int, d_joint: int, vocab_size: int):
        self.visual = Linear(rng, d, d_joint)
        self.text = Linear(rng, d, d_joint)
        self.out = Linear(rng, d_joint, vocab_size)

    def __call__(self, h_v: Tensor, h_w: Tensor) -> Tensor:
        d = self.visual.weight.shape[0]
        if h_v.shape[-1] != d or h_w.shape[-1] != d:
            raise DimensionError(f"joint expects {d}-dim inputs; got {h_v.shape} and {h_w.shape}")
        hidden = (self.visual(h_v) + self.text(h_w)).relu()
        return log_softmax(self.out(hidden))


def joint(h_v: Tensor, h_w: Tensor, net: JointNetwork) -> Tensor:
    """Log-distribution over the vocabulary (index 0 is the blank)."""
    return net(h_v, h_w)
