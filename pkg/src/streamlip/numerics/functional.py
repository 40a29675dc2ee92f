"""Neural-network primitives on :class:`Tensor`."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, matmul


def relu(x: Tensor) -> Tensor:
    return x.relu()


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; ``weight`` is (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    y = matmul(x.reshape(-1, x.shape[-1]), weight)
    if bias is not None:
        y = y + bias
    return y.reshape(*lead, weight.shape[1])


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    shifted = a - a.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), backward)


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over positions where ``mask`` is true.

    Masked positions get weight exactly 0. A slice with no visible position
    returns all zeros rather than NaN.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        try:
            mask = np.broadcast_to(mask, x.shape)
        except ValueError:
            raise DimensionError(f"mask shape {mask.shape} does not match scores {x.shape}") from None
    a = np.where(mask, x.data, -np.inf)
    peak = a.max(axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.where(mask, np.exp(a - peak), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    out = (e / np.where(total > 0, total, 1.0)).astype(x.dtype, copy=False)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._result(out, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = x.data
    peak = a.max(axis=axis, keepdims=True)
    s = np.exp(a - peak)
    total = s.sum(axis=axis, keepdims=True)
    out = np.log(total) + peak
    weights = s / total

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return Tensor._result(out if keepdims else np.squeeze(out, axis), (x,), backward)


def scaled_dot_attention(q: Tensor, kv: Tensor, mask: np.ndarray | None = None, v: Tensor | None = None):
    """Dot-product attention ``softmax(q kᵀ / √d) v``.

    ``q`` is (..., Lq, d) and ``kv`` is (..., Lk, d); ``kv`` serves as keys and,
    unless ``v`` is given, as values too. ``mask`` (..., Lq, Lk) marks visible
    keys. Returns ``(output, weights)``; fully masked query rows give zeros.
    """
    if q.shape[-1] != kv.shape[-1]:
        raise DimensionError(f"attention: query dim {q.shape} does not match key dim {kv.shape}")
    values = kv if v is None else v
    scores = matmul(q, kv.swapaxes(-1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    if mask is None:
        weights = softmax(scores, axis=-1)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != scores.shape[-2:]:
            raise DimensionError(f"attention: mask shape {mask.shape} does not match scores {scores.shape}")
        weights = masked_softmax(scores, mask, axis=-1)
    return matmul(weights, values), weights


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gdata = gain.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gdata
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(a.ndim - 1))
        gg = (g * xhat).sum(axis=red) if gain.requires_grad else None
        gb = g.sum(axis=red) if bias.requires_grad else None
        return gx, gg, gb

    return Tensor._result(xhat * gdata + bias.data, (x, gain, bias), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding id out of range [0, {weight.shape[0]})")
    return weight[ids]


def mean_over(x: Tensor, axis: int) -> Tensor:
    return x.mean(axis=axis)


def max_over(x: Tensor, axis: int) -> Tensor:
    return x.max(axis=axis)


# -- 3D convolution -----------------------------------------------------------


def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return t


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation of a (C, T, H, W) input with a (C', C, kt, kh, kw) kernel.

    Output is (C', To, Ho, Wo) with ``o = (n + 2p - k) // s + 1`` per axis.
    """
    if x.ndim != 4 or kernel.ndim != 5:
        raise DimensionError(f"conv3d expects (C,T,H,W) and (C',C,kt,kh,kw), got {x.shape}, {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise DimensionError(f"conv3d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    stride = _triple(stride)
    pad = _triple(padding)
    ks = kernel.shape[2:]
    padded_dims = [x.shape[i + 1] + 2 * pad[i] for i in range(3)]
    if any(k > n for k, n in zip(ks, padded_dims)):
        raise DimensionError(f"conv3d kernel {tuple(ks)} larger than padded input {tuple(padded_dims)}")

    xp = np.pad(x.data, ((0, 0), (pad[0], pad[0]), (pad[1], pad[1]), (pad[2], pad[2])))
    c = x.shape[0]
    kt, kh, kw = ks
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    windows = windows[:, :: stride[0], :: stride[1], :: stride[2]]
    to, ho, wo = windows.shape[1:4]
    # (To*Ho*Wo, C*kt*kh*kw)
    cols = np.ascontiguousarray(windows.transpose(1, 2, 3, 0, 4, 5, 6)).reshape(to * ho * wo, -1)
    wmat = kernel.data.reshape(kernel.shape[0], -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.T.reshape(kernel.shape[0], to, ho, wo)

    def backward(g):
        g2 = g.reshape(kernel.shape[0], -1).T  # (P, C')
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(to, ho, wo, c, kt, kh, kw)
            gxp = np.zeros_like(xp)
            for a in range(kt):
                for b in range(kh):
                    for d in range(kw):
                        gxp[
                            :,
                            a : a + stride[0] * to : stride[0],
                            b : b + stride[1] * ho : stride[1],
                            d : d + stride[2] * wo : stride[2],
                        ] += gcols[:, :, :, :, a, b, d].transpose(3, 0, 1, 2)
            gx = gxp[:, pad[0] : pad[0] + x.shape[1], pad[1] : pad[1] + x.shape[2], pad[2] : pad[2] + x.shape[3]]
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernel, bias) if bias is not None else (x, kernel)
    return Tensor._result(out, parents, backward)


def max_pool3d(x: Tensor, kernel, stride=None) -> Tensor:
    """Non-overlapping or strided max pooling over (T, H, W) of a (C, T, H, W) input.

    Trailing positions that do not fill a window are dropped.
    """
    kernel = _triple(kernel)
    stride = kernel if stride is None else _triple(stride)
    if any(k > n for k, n in zip(kernel, x.shape[1:])):
        raise DimensionError(f"max_pool3d window {kernel} larger than input {x.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, kernel, axis=(1, 2, 3))
    windows = windows[:, :: stride[0], :: stride[1], :: stride[2]]
    c, to, ho, wo = windows.shape[:4]
    flat = windows.reshape(c, to, ho, wo, -1)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    kt, kh, kw = kernel
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        dt, rem = np.divmod(arg, kh * kw)
        dh, dw = np.divmod(rem, kw)
        ci, ti, hi, wi = np.indices(arg.shape)
        np.add.at(
            gx,
            (ci, ti * stride[0] + dt, hi * stride[1] + dh, wi * stride[2] + dw),
            g,
        )
        return (gx,)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward)


def global_norm_clip(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; return the pre-clip norm."""
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


__all__ = [
    "relu",
    "linear",
    "softmax",
    "log_softmax",
    "masked_softmax",
    "logsumexp",
    "scaled_dot_attention",
    "layer_norm",
    "embedding",
    "mean_over",
    "max_over",
    "conv3d",
    "max_pool3d",
    "global_norm_clip",
]
