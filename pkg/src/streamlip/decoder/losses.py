"""Transducer and CTC losses as fused autograd ops.

Both run the forward recursion in log space (float64 internally, whatever the
tensor precision) and obtain gradients from the matching backward recursion,
so the graph holds one node per loss rather than one per lattice cell.

Transducer lattice convention (``terminal_blank=True``): rows are segments
``1..n``, columns are emitted-prefix lengths ``0..u``. A path starts at
(1, 0), moves down with a blank and right with the next target token, and ends
with a blank at (n, u)::

    alpha(1, 0) = 0
    alpha(t, i) = logadd(alpha(t-1, i) + R[t-1, i](blank), alpha(t, i-1) + R[t, i-1](w_i))
    loss        = -(alpha(n, u) + R[n, u](blank))

With ``terminal_blank=False`` the lattice has ``n + 1`` rows (row 0 sees no
video yet) and the loss is ``-alpha(n, u)`` without the final blank.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, InfeasibleError
from ..numerics import Tensor, take_along_axis

NEG_INF = -np.inf


# -- transducer -------------------------------------------------------------------


def _transducer_alpha(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    b, rows, cols = blank.shape
    alpha = np.full((b, rows, cols), NEG_INF)
    alpha[:, 0, 0] = 0.0
    for i in range(1, cols):
        alpha[:, 0, i] = alpha[:, 0, i - 1] + emit[:, 0, i - 1]
    for t in range(1, rows):
        alpha[:, t, 0] = alpha[:, t - 1, 0] + blank[:, t - 1, 0]
        for i in range(1, cols):
            alpha[:, t, i] = np.logaddexp(alpha[:, t - 1, i] + blank[:, t - 1, i], alpha[:, t, i - 1] + emit[:, t, i - 1])
    return alpha


def _transducer_beta(blank, emit, last_row, u_lens, end_value) -> np.ndarray:
    b, rows, cols = blank.shape
    beta = np.full((b, rows + 1, cols + 1), NEG_INF)
    for t in range(rows - 1, -1, -1):
        for i in range(cols - 1, -1, -1):
            down = blank[:, t, i] + beta[:, t + 1, i]
            right = emit[:, t, i] + beta[:, t, i + 1] if i < cols - 1 else np.full(b, NEG_INF)
            is_end = (last_row == t) & (u_lens == i)
            beta[:, t, i] = np.where(is_end, end_value, np.logaddexp(down, right))
    return beta[:, :rows, :cols]


def transducer_nll(
    blank: Tensor,
    emit: Tensor,
    n_lens,
    u_lens,
    terminal_blank: bool = True,
) -> Tensor:
    """Per-utterance transducer negative log-likelihood.

    ``blank`` is (B, rows, U+1) with ``log R[t, i](blank)``; ``emit`` is
    (B, rows, U) with ``log R[t, i](w_{i+1})``. ``n_lens`` counts segments and
    ``u_lens`` target tokens per utterance; entries beyond them are ignored.
    Returns a (B,) tensor.
    """
    n_lens = np.asarray(n_lens, dtype=np.int64)
    u_lens = np.asarray(u_lens, dtype=np.int64)
    if np.any(n_lens < 1):
        raise InfeasibleError("transducer lattice needs at least one segment")
    bl = blank.data.astype(np.float64)
    em = emit.data.astype(np.float64)
    b, rows, cols = bl.shape
    if em.shape != (b, rows, cols - 1):
        raise DimensionError(f"emit {em.shape} does not match blank {bl.shape}")
    last_row = n_lens - 1 if terminal_blank else n_lens
    if np.any(last_row >= rows) or np.any(u_lens >= cols):
        raise DimensionError("lengths exceed the lattice")
    idx = np.arange(b)
    alpha = _transducer_alpha(bl, em)
    end_value = bl[idx, last_row, u_lens] if terminal_blank else np.zeros(b)
    log_p = alpha[idx, last_row, u_lens] + end_value
    dtype = blank.dtype

    def backward(g):
        beta = _transducer_beta(bl, em, last_row, u_lens, end_value)
        scale = np.asarray(g, dtype=np.float64)[:, None, None]
        below = np.concatenate([beta[:, 1:], np.full((b, 1, cols), NEG_INF)], axis=1)
        with np.errstate(invalid="ignore"):
            g_blank = np.exp(alpha + bl + below - log_p[:, None, None])
            if terminal_blank:
                g_blank[idx, last_row, u_lens] += np.exp(alpha[idx, last_row, u_lens] + end_value - log_p)
            g_emit = np.exp(alpha[:, :, :-1] + em + beta[:, :, 1:] - log_p[:, None, None])
        g_blank = np.nan_to_num(g_blank, nan=0.0)
        g_emit = np.nan_to_num(g_emit, nan=0.0)
        return (-scale * g_blank).astype(dtype), (-scale * g_emit).astype(dtype)

    return Tensor._result((-log_p).astype(dtype), (blank, emit), backward)


def lattice_views(lattice: Tensor, targets: np.ndarray, blank: int = 0) -> tuple[Tensor, Tensor]:
    """Split a (..., rows, U+1, V) lattice into blank (..., rows, U+1) and emit (..., rows, U) log-probs."""
    targets = np.asarray(targets, dtype=np.int64)
    u = targets.shape[-1]
    if lattice.shape[-2] != u + 1:
        raise DimensionError(f"lattice {lattice.shape} needs U+1 = {u + 1} prefix columns")
    blank_lp = lattice[..., blank]
    rows = lattice.shape[-3]
    lead = lattice.shape[:-3]
    idx = np.broadcast_to(targets.reshape(lead + (1, u, 1)), lead + (rows, u, 1))
    emit_lp = take_along_axis(lattice[..., :u, :], idx, axis=-1)[..., 0]
    return blank_lp, emit_lp


def transducer_loss(lattice: Tensor, targets, terminal_blank: bool = True, blank: int = 0) -> Tensor:
    """``-log P(w | s)`` for one utterance; ``lattice`` is (rows, u+1, V) log-probabilities.

    ``rows`` is ``n`` with a terminal blank and ``n + 1`` without one.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if lattice.ndim != 3:
        raise DimensionError(f"lattice must be (rows, u+1, V); got {lattice.shape}")
    rows = lattice.shape[0]
    n = rows if terminal_blank else rows - 1
    if n < 1 and len(targets) > 0 or rows < 1:
        raise InfeasibleError(f"no segments to emit {len(targets)} tokens from")
    if n < 1:
        return Tensor._result(np.zeros((), dtype=lattice.dtype), (lattice,), lambda g: (np.zeros(lattice.shape, lattice.dtype),))
    bl, em = lattice_views(lattice, targets, blank)
    return transducer_nll(bl[None], em[None], [n], [len(targets)], terminal_blank)[0]


# -- CTC ---------------------------------------------------------------------------


def ctc_min_frames(target) -> int:
    """Fewest frames that can spell ``target``: one per token plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def ctc_nll(log_probs: Tensor, t_lens, targets, u_lens, blank: int = 0) -> Tensor:
    """Per-utterance CTC negative log-likelihood.

    ``log_probs`` is (B, T, V) per-frame log-probabilities, ``targets`` (B, U)
    padded token ids. Returns a (B,) tensor.
    """
    lp = log_probs.data.astype(np.float64)
    b, t_max, v = lp.shape
    t_lens = np.asarray(t_lens, dtype=np.int64)
    u_lens = np.asarray(u_lens, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64).reshape(b, -1)
    for j in range(b):
        need = max(1, ctc_min_frames(targets[j, : u_lens[j]]))
        if t_lens[j] < need:
            raise InfeasibleError(f"target of {u_lens[j]} tokens needs {need} frames, got {t_lens[j]}")
    s_max = 2 * targets.shape[1] + 1
    labels = np.full((b, s_max), blank, dtype=np.int64)
    labels[:, 1::2] = targets
    skip = np.zeros((b, s_max), bool)
    skip[:, 2:] = (labels[:, 2:] != blank) & (labels[:, 2:] != labels[:, :-2])
    y = np.take_along_axis(lp, np.broadcast_to(labels[:, None, :], (b, t_max, s_max)), axis=2)

    def shift(a, k):
        out = np.full_like(a, NEG_INF)
        out[:, k:] = a[:, :-k]
        return out

    alpha = np.full((b, t_max, s_max), NEG_INF)
    alpha[:, 0, 0] = y[:, 0, 0]
    if s_max > 1:
        alpha[:, 0, 1] = np.where(u_lens > 0, y[:, 0, 1], NEG_INF)
    for t in range(1, t_max):
        prev = alpha[:, t - 1]
        acc = np.logaddexp(prev, shift(prev, 1))
        acc = np.where(skip, np.logaddexp(acc, shift(prev, 2)), acc)
        alpha[:, t] = y[:, t] + acc
    idx = np.arange(b)
    last = t_lens - 1
    s_end = 2 * u_lens
    log_p = np.where(
        u_lens > 0,
        np.logaddexp(alpha[idx, last, s_end], alpha[idx, last, np.maximum(s_end - 1, 0)]),
        alpha[idx, last, 0],
    )
    dtype = log_probs.dtype

    def backward(g):
        beta = np.full((b, t_max, s_max), NEG_INF)
        skip_next = np.zeros((b, s_max), bool)
        skip_next[:, :-2] = skip[:, 2:]
        for t in range(t_max - 1, -1, -1):
            if t < t_max - 1:
                nxt = beta[:, t + 1]
                acc = np.logaddexp(nxt, np.concatenate([nxt[:, 1:], np.full((b, 1), NEG_INF)], axis=1))
                two = np.concatenate([nxt[:, 2:], np.full((b, 2), NEG_INF)], axis=1)
                acc = np.where(skip_next, np.logaddexp(acc, two), acc)
                beta[:, t] = y[:, t] + acc
            ends = np.flatnonzero(last == t)
            if len(ends):
                beta[ends, t] = NEG_INF
                beta[ends, t, s_end[ends]] = y[ends, t, s_end[ends]]
                has = ends[u_lens[ends] > 0]
                beta[has, t, s_end[has] - 1] = y[has, t, s_end[has] - 1]
        with np.errstate(invalid="ignore"):
            occ = np.exp(alpha + beta - y - log_p[:, None, None])
        occ = np.nan_to_num(occ, nan=0.0)
        grad = np.zeros_like(lp)
        bi, ti, si = np.indices(occ.shape, sparse=True)
        np.add.at(grad, (bi, ti, np.broadcast_to(labels[:, None, :], occ.shape)), occ)
        return ((-np.asarray(g, dtype=np.float64)[:, None, None] * grad).astype(dtype),)

    return Tensor._result((-log_p).astype(dtype), (log_probs,), backward)


def ctc_loss(log_probs: Tensor, target, blank: int = 0) -> Tensor:
    """``-log sum_{c in phi(w)} P(c | s)`` for one (T, V) matrix of per-frame log-probabilities."""
    target = np.asarray(target, dtype=np.int64)
    if log_probs.ndim != 2:
        raise DimensionError(f"log_probs must be (T, V); got {log_probs.shape}")
    u = len(target)
    targets = target[None] if u else np.zeros((1, 0), np.int64)
    return ctc_nll(log_probs[None], [log_probs.shape[0]], targets, [u], blank)[0]
