"""Parameter containers and the transformer block shared by encoder and LM."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .numerics import Tensor, layer_norm, linear, masked_softmax, matmul


class Module:
    """Anything holding :class:`Tensor` parameters as attributes (or lists of modules)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(scale=scale, size=(fan_in, fan_out)), requires_grad=True)


def init_zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.weight = init_weight(rng, d_in, d_out)
        self.bias = init_zeros(d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = init_ones(d)
        self.bias = init_zeros(d)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        self.heads = heads
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)

    def project(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """(..., L, d) -> three (..., heads, L, d/heads) tensors."""
        return self._split(self.wq(x)), self._split(self.wk(x)), self._split(self.wv(x))

    def _split(self, x: Tensor) -> Tensor:
        *lead, length, d = x.shape
        nd = len(lead)
        x = x.reshape(*lead, length, self.heads, d // self.heads)
        return x.transpose(*range(nd), nd + 1, nd, nd + 2)

    def _merge(self, x: Tensor) -> Tensor:
        *lead, heads, length, dh = x.shape
        nd = len(lead)
        return x.transpose(*range(nd), nd + 1, nd, nd + 2).reshape(*lead, length, heads * dh)

    def attend(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
        """Per-head attention; ``mask`` broadcasts against (..., heads, Lq, Lk)."""
        scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
        weights = masked_softmax(scores, np.broadcast_to(mask, scores.shape))
        return self.wo(self._merge(matmul(weights, v)))

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        q, k, v = self.project(x)
        return self.attend(q, k, v, mask)


class TransformerLayer(Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, d_ff: int):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(rng, d, heads)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(rng, d, d_ff)
        self.ff2 = Linear(rng, d_ff, d)

    def feed_forward(self, x: Tensor) -> Tensor:
        return x + self.ff2(self.ff1(self.ln2(x)).relu())

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return self.feed_forward(x)
