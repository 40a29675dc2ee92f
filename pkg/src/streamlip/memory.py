"""Attention-guided adaptive memory.

``k`` banks hold summaries of past segments. Each new segment reads the
memory through dot-product attention and adds the attended mixture to its
frames (:func:`enhance`). Afterwards (:func:`update`) the attention weights
are added to per-bank usage counts and the segment summary is written back:

* while fewer than ``k`` banks are occupied the summary is appended;
* with ``lfu_momentum``, a low-entropy (redundant) read merges the summary
  into the most-attended bank by an exponential moving average;
* otherwise the bank with the smallest ``count / life`` is replaced
  (``fifo`` replaces the oldest bank instead).

Banks are tensors, so gradients flow through stored summaries into earlier
segments. All bookkeeping (counts, lifetimes, decisions) is plain numpy.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .config import MemoryConfig
from .errors import DimensionError, DomainError, StateError
from .layers import Module
from .numerics import Tensor, masked_softmax, matmul


class Summarizer(Module):
    """Aggregate the frames of a segment into one vector: avg-pool, max-pool or a learned temporal conv."""

    def __init__(self, how: str, n_f: int, d: int):
        self._how = how
        if how == "conv":
            self.weight = Tensor(np.full((n_f, d), 1.0 / n_f), requires_grad=True)
            self.bias = Tensor(np.zeros(d), requires_grad=True)

    @property
    def how(self) -> str:
        return self._how

    def __call__(self, h: Tensor, frame_mask: np.ndarray | None = None) -> Tensor:
        """(..., n_f, d) -> (..., d), ignoring frames where ``frame_mask`` is false."""
        if frame_mask is None:
            frame_mask = np.ones(h.shape[:-1], bool)
        m = np.asarray(frame_mask, bool)[..., None]
        if self._how == "avgpool":
            count = np.maximum(m.sum(axis=-2), 1).astype(h.dtype)
            return (h * m.astype(h.dtype)).sum(axis=-2) / count
        if self._how == "maxpool":
            floor = np.where(m, 0.0, -1e30).astype(h.dtype)
            return (h + floor).max(axis=-2)
        return (h * self.weight * m.astype(h.dtype)).sum(axis=-2) + self.bias


def average_frames(h: Tensor, frame_mask: np.ndarray | None = None) -> Tensor:
    """Mean over the frame axis of (..., n_f, d), real frames only."""
    return Summarizer("avgpool", h.shape[-2], h.shape[-1])(h, frame_mask)


@dataclass
class MemoryState:
    """Banks plus LFU bookkeeping for one stream.

    ``life`` of an occupied bank is ``current_step - birth_step + 1``.
    """

    banks: Tensor
    counts: np.ndarray
    birth_step: np.ndarray
    current_step: int = 0
    occupancy: int = 0

    @classmethod
    def empty(cls, k: int, d: int, dtype=None) -> "MemoryState":
        banks = Tensor(np.zeros((k, d), dtype=dtype)) if dtype is not None else Tensor(np.zeros((k, d)))
        return cls(banks, np.zeros(k), np.zeros(k, dtype=np.int64))

    @property
    def k(self) -> int:
        return self.banks.shape[0]

    @property
    def d(self) -> int:
        return self.banks.shape[1]

    def occupied(self) -> np.ndarray:
        mask = np.zeros(self.k, bool)
        mask[: self.occupancy] = True
        return mask

    def life(self) -> np.ndarray:
        return np.where(self.occupied(), self.current_step - self.birth_step + 1, 0)

    def lfu_index(self) -> np.ndarray:
        """``count / life`` for occupied banks, +inf elsewhere."""
        life = self.life()
        return np.where(self.occupied(), self.counts / np.maximum(life, 1), np.inf)

    def copy(self) -> "MemoryState":
        return MemoryState(self.banks, self.counts.copy(), self.birth_step.copy(), self.current_step, self.occupancy)


@dataclass
class MemoryAction:
    kind: str  # "append" | "merge" | "evict"
    slot: int
    entropy: float

    def __str__(self) -> str:
        return f"evict({self.slot})" if self.kind == "evict" else self.kind


def entropy(alpha) -> float:
    """Shannon entropy in bits, with ``0 log 0 = 0``."""
    p = np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError("attention weights must be non-negative")
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _scores(query: Tensor, banks: Tensor) -> Tensor:
    return matmul(banks, query[..., None])[..., 0] * (1.0 / math.sqrt(query.shape[-1]))


def enhance(h_t: Tensor, state: MemoryState, summarizer: Summarizer | None = None, frame_mask=None):
    """Read the memory for one segment.

    Returns ``(h_tilde, alpha)``: ``alpha`` (k,) is the softmax over occupied
    banks of ``Summarize(h_t) . m_i / sqrt(d)`` and
    ``h_tilde = h_t + sum_i alpha_i m_i`` on every frame. With an empty memory
    ``h_tilde`` is ``h_t`` itself and ``alpha`` is all zeros.
    """
    if h_t.shape[-1] != state.d:
        raise DimensionError(f"segment features {h_t.shape} do not match banks {state.banks.shape}")
    if state.occupancy == 0:
        return h_t, Tensor(np.zeros(state.k, dtype=h_t.dtype))
    summarizer = summarizer or Summarizer("avgpool", h_t.shape[-2], h_t.shape[-1])
    query = summarizer(h_t, frame_mask)
    alpha = masked_softmax(_scores(query, state.banks), state.occupied())
    context = matmul(alpha[None], state.banks)  # (1, d)
    return h_t + context, alpha


def decide(state: MemoryState, alpha: np.ndarray, config: MemoryConfig) -> tuple[np.ndarray, MemoryAction]:
    """Counts after this read and the write action, without touching ``state``.

    Ties in argmax / argmin go to the lowest index.
    """
    counts = state.counts + np.where(state.occupied(), alpha, 0.0)
    h = entropy(alpha) if state.occupancy else 0.0
    gated = config.strategy == "lfu_momentum" and state.occupancy > 0 and h < config.entropy_threshold
    if state.occupancy < state.k and not (gated and config.gate_during_fill):
        return counts, MemoryAction("append", state.occupancy, h)
    if gated:
        return counts, MemoryAction("merge", int(np.argmax(np.where(state.occupied(), alpha, -np.inf))), h)
    if config.strategy == "fifo":
        birth = np.where(state.occupied(), state.birth_step, np.iinfo(np.int64).max)
        return counts, MemoryAction("evict", int(np.argmin(birth)), h)
    life = np.where(state.occupied(), state.current_step - state.birth_step + 1, 1)
    lfu = np.where(state.occupied(), counts / life, np.inf)
    return counts, MemoryAction("evict", int(np.argmin(lfu)), h)


def write_coefficients(action: MemoryAction, k: int, gamma_m: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-bank (keep, put) so that ``banks' = keep * banks + put * summary``."""
    keep = np.ones(k)
    put = np.zeros(k)
    if action.kind == "merge":
        keep[action.slot] = gamma_m
        put[action.slot] = 1.0 - gamma_m
    else:
        keep[action.slot] = 0.0
        put[action.slot] = 1.0
    return keep, put


def _apply_bookkeeping(state: MemoryState, counts: np.ndarray, action: MemoryAction, config: MemoryConfig) -> MemoryState:
    new = state.copy()
    new.counts = counts
    if action.kind in ("append", "evict"):
        new.counts[action.slot] = config.initial_count
        new.birth_step[action.slot] = state.current_step
    if action.kind == "append":
        new.occupancy += 1
    new.current_step += 1
    return new


def update(
    state: MemoryState,
    h_t: Tensor,
    alpha,
    config: MemoryConfig,
    summarizer: Summarizer | None = None,
    frame_mask=None,
    trace: "MemoryTrace | None" = None,
) -> MemoryState:
    """Write segment ``h_t`` into the memory; returns the new state."""
    a = np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha, dtype=np.float64)
    if a.shape != (state.k,):
        raise StateError(f"attention has shape {a.shape}, memory has k={state.k} banks")
    summarizer = summarizer or Summarizer("avgpool", h_t.shape[-2], h_t.shape[-1])
    summary = summarizer(h_t, frame_mask)
    counts, action = decide(state, a, config)
    keep, put = write_coefficients(action, state.k, config.gamma_m)
    dtype = state.banks.dtype
    banks = state.banks * Tensor(keep.astype(dtype)[:, None]) + summary[None, :] * Tensor(put.astype(dtype)[:, None])
    new = _apply_bookkeeping(state, counts, action, config)
    new.banks = banks
    if trace is not None:
        trace.record(state.current_step, a, action)
    return new


class BatchMemory:
    """Memory for ``B`` independent streams advanced in lock-step (training path).

    Uses the same :func:`decide` rule as the single-stream API; the tensor
    arithmetic is batched over streams.
    """

    def __init__(self, batch: int, d: int, config: MemoryConfig, summarizer: Summarizer, dtype):
        self.config = config
        self.summarizer = summarizer
        self.states = [MemoryState.empty(config.k, d, dtype) for _ in range(batch)]
        self.banks = Tensor(np.zeros((batch, config.k, d), dtype=dtype))

    def step(self, h: Tensor, frame_mask: np.ndarray, active: np.ndarray) -> Tensor:
        """Enhance (B, n_f, d) features of one segment index, then write them back."""
        k = self.config.k
        occ = np.array([s.occupancy for s in self.states])
        summary = self.summarizer(h, frame_mask)
        if occ.max() == 0:
            enhanced = h
            alpha_np = np.zeros((len(self.states), k))
        else:
            occupied = np.arange(k)[None, :] < occ[:, None]
            alpha = masked_softmax(_scores(summary, self.banks), occupied)
            context = matmul(alpha[:, None, :], self.banks)  # (B, 1, d)
            enhanced = h + context
            alpha_np = alpha.data.astype(np.float64)
        keep = np.ones((len(self.states), k))
        put = np.zeros((len(self.states), k))
        for b, state in enumerate(self.states):
            if not active[b]:
                continue
            counts, action = decide(state, alpha_np[b], self.config)
            keep[b], put[b] = write_coefficients(action, k, self.config.gamma_m)
            self.states[b] = _apply_bookkeeping(state, counts, action, self.config)
        dtype = h.dtype
        self.banks = self.banks * Tensor(keep.astype(dtype)[..., None]) + summary[:, None, :] * Tensor(
            put.astype(dtype)[..., None]
        )
        return enhanced


@dataclass
class MemoryTrace:
    """Per-step log of reads and writes, dumpable as comma-separated text."""

    rows: list[tuple[int, np.ndarray, float, str]] = field(default_factory=list)

    def record(self, step: int, alpha: np.ndarray, action: MemoryAction) -> None:
        self.rows.append((step, np.array(alpha, dtype=np.float64), action.entropy, str(action)))

    def to_csv(self) -> str:
        out = io.StringIO()
        k = len(self.rows[0][1]) if self.rows else 0
        out.write(",".join(["step", "entropy_bits", "action"] + [f"alpha_{i}" for i in range(k)]) + "\n")
        for step, alpha, h, action in self.rows:
            out.write(",".join([str(step), f"{h:.6f}", action] + [f"{x:.6f}" for x in alpha]) + "\n")
        return out.getvalue()
