"""Uni-directional transformer language model over emitted tokens.

Position 0 is a BOS slot that reuses embedding row 0 (the blank id, which
never appears as an input token), so ``encode(prefix)`` has ``len(prefix)+1``
rows and row ``i`` summarises ``prefix[:i]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, InputError
from ..layers import LayerNorm, Module, TransformerLayer
from ..numerics import Tensor, concatenate, embedding


class LanguageModel(Module):
    def __init__(self, rng: np.random.Generator, vocab_size: int, d: int, layers: int, heads: int, d_ff: int, max_len: int = 256):
        self.embed = Tensor(rng.normal(scale=1.0 / np.sqrt(d), size=(vocab_size, d)), requires_grad=True)
        self.pos = Tensor(rng.normal(scale=0.02, size=(max_len + 1, d)), requires_grad=True)
        self.layers = [TransformerLayer(rng, d, heads, d_ff) for _ in range(layers)]
        self.ln_out = LayerNorm(d)
        self._vocab = vocab_size

    @property
    def vocab_size(self) -> int:
        return self._vocab

    def _inputs(self, tokens: np.ndarray) -> Tensor:
        """(B, U) ids -> (B, U+1, d) embeddings with BOS prepended and positions added."""
        b, u = tokens.shape
        if u + 1 > self.pos.shape[0]:
            raise DimensionError(f"prefix of {u} tokens exceeds the LM's {self.pos.shape[0] - 1} positions")
        ids = np.concatenate([np.zeros((b, 1), np.int64), tokens], axis=1)
        return embedding(self.embed, ids) + self.pos[: u + 1]

    def encode_batch(self, tokens) -> Tensor:
        """(B, U) padded ids -> (B, U+1, d). Causality makes trailing padding harmless."""
        tokens = np.asarray(tokens, dtype=np.int64)
        x = self._inputs(tokens)
        length = tokens.shape[1] + 1
        mask = np.tril(np.ones((length, length), bool))[None, None]
        for layer in self.layers:
            x = layer(x, mask)
        return self.ln_out(x)

    def encode(self, prefix) -> Tensor:
        return self.encode_batch(np.asarray(prefix, dtype=np.int64).reshape(1, -1))[0]

    # -- incremental ------------------------------------------------------------------

    def start(self) -> "LMState":
        return self._step(LMState(None, (), (), 0), 0)

    def advance(self, state: "LMState", token: int) -> "LMState":
        """State after appending ``token``; ``state`` itself is left untouched."""
        if not 1 <= token < self._vocab:
            raise InputError(f"token {token} is not a real vocabulary id")
        return self._step(state, token)

    def _step(self, state: "LMState", token: int) -> "LMState":
        p = state.length
        x = embedding(self.embed, np.array([[token]])) + self.pos[p : p + 1]  # (1, 1, d)
        keys, values = [], []
        for j, layer in enumerate(self.layers):
            q, k, v = layer.attn.project(layer.ln1(x))  # (1, heads, 1, dh)
            if p:
                k = concatenate([state.keys[j], k], axis=2)
                v = concatenate([state.values[j], v], axis=2)
            keys.append(k)
            values.append(v)
            x = x + layer.attn.attend(q, k, v, np.ones((1, 1, p + 1), bool))
            x = layer.feed_forward(x)
        return LMState(self.ln_out(x)[0, 0], tuple(keys), tuple(values), p + 1)


@dataclass(frozen=True)
class LMState:
    """Cached keys/values per layer plus the output for the latest position."""

    h: Tensor | None
    keys: tuple
    values: tuple
    length: int


def lm_encode(prefix, lm: LanguageModel) -> Tensor:
    """Causal LM states for BOS + ``prefix``: (len(prefix)+1, d)."""
    ids = np.asarray(prefix, dtype=np.int64).reshape(-1)
    if np.any(ids == 0):
        raise InputError("the blank symbol cannot appear in an LM prefix")
    if np.any(ids < 0) or np.any(ids >= lm.vocab_size):
        raise InputError(f"prefix ids must lie in 1..{lm.vocab_size - 1}")
    return lm.encode(ids)

