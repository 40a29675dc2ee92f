"""Streaming visual encoder: truncated 3D convolution + time-restricted self-attention.

Every segment ``t`` is encoded from its own window of segments
``t-a+1 .. t`` only. All layers run inside that window, so stacking layers
never widens the receptive field: ``h_t`` is a pure function of the window,
and incremental (segment-by-segment) encoding is the same computation as
whole-stream encoding.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .config import EncoderConfig
from .data import SegmentStream
from .errors import DimensionError, ModeError
from .layers import LayerNorm, Linear, Module, TransformerLayer
from .numerics import Tensor, concatenate, conv3d, max_pool3d
from .numerics.functional import _conv_out


def time_restricted_mask(n: int, n_f: int, a: int, t: int) -> np.ndarray:
    """Visibility of frames for queries in segments ``1..t`` of an ``n``-segment stream.

    Entry ``(i, j)`` is true iff frame ``j`` lies in segments
    ``max(1, seg(i)-a+1) .. seg(i)`` (segments and ``t`` are 1-based).
    """
    if not 1 <= t <= n:
        raise IndexError(f"segment t={t} outside 1..{n}")
    seg_q = np.arange(t * n_f) // n_f
    seg_k = np.arange(n * n_f) // n_f
    return (seg_k[None, :] <= seg_q[:, None]) & (seg_k[None, :] >= seg_q[:, None] - a + 1)


def _window_block_mask(a: int, n_f: int) -> np.ndarray:
    seg = np.arange(a * n_f) // n_f
    return seg[None, :] <= seg[:, None]


class FeatureFrontend(Module):
    """Linear projection of (…, n_f, d_in) frame features; stands in for C3D on synthetic data."""

    def __init__(self, rng, d_in: int, d: int):
        self.proj = Linear(rng, d_in, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(x)


class TruncatedC3D(Module):
    """3D conv stack applied to one segment at a time.

    Each stage is a 3x3x3 (by default) convolution padded so the segment keeps
    its ``n_f`` frames, ReLU, and optionally 1x2x2 max pooling (never over
    time). Two fully connected layers then map each frame to ``d_hidden``.
    """

    def __init__(self, rng, cfg: EncoderConfig):
        self.kernels: list[Tensor] = []
        self.biases: list[Tensor] = []
        c = cfg.in_channels
        h, w = cfg.frame_hw
        for stage in cfg.c3d:
            k = stage.kernel
            fan = c * k**3
            self.kernels.append(Tensor(rng.normal(scale=np.sqrt(2.0 / fan), size=(stage.channels, c, k, k, k)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(stage.channels), requires_grad=True))
            h, w = _conv_out(h, k, 1, k // 2), _conv_out(w, k, 1, k // 2)
            if stage.pool:
                h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise DimensionError(f"C3D stages collapse the {cfg.frame_hw} frame to nothing")
            c = stage.channels
        self._pools = [s.pool for s in cfg.c3d]
        self._pads = [s.kernel // 2 for s in cfg.c3d]
        self.out_shape = (c, h, w)
        self.fc1 = Linear(rng, c * h * w, cfg.d_hidden)
        self.fc2 = Linear(rng, cfg.d_hidden, cfg.d_hidden)

    def __call__(self, segment: Tensor) -> Tensor:
        """(C, n_f, H, W) -> (n_f, d_hidden)."""
        x = segment
        for kern, bias, pool, pad in zip(self.kernels, self.biases, self._pools, self._pads):
            if any(d + 2 * pad < kern.shape[2] for d in x.shape[1:]):
                raise DimensionError(f"segment {x.shape} smaller than kernel {kern.shape[2:]}")
            x = conv3d(x, kern, bias, padding=pad).relu()
            if pool:
                x = max_pool3d(x, (1, 2, 2))
        c, n_f, h, w = x.shape
        x = x.transpose(1, 0, 2, 3).reshape(n_f, c * h * w)
        return self.fc2(self.fc1(x).relu())


def truncated_c3d(segment, frontend: TruncatedC3D) -> Tensor:
    """Encode one raw segment (C, n_f, H, W) into (n_f, d_hidden) frame features."""
    if not isinstance(frontend, TruncatedC3D):
        raise ModeError("truncated_c3d needs a raw-mode encoder")
    seg = segment if isinstance(segment, Tensor) else Tensor(segment)
    if seg.ndim != 4:
        raise ModeError(f"raw segments are (C, n_f, H, W); got {seg.shape}")
    return frontend(seg)


class StreamEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self._cfg = cfg
        d = cfg.d_hidden
        if cfg.input_mode == "raw":
            self.frontend: Module = TruncatedC3D(rng, cfg)
        else:
            self.frontend = FeatureFrontend(rng, cfg.d_in, d)
        self.pos = Tensor(rng.normal(scale=0.02, size=(cfg.max_positions, d)), requires_grad=True)
        self.layers = [TransformerLayer(rng, d, cfg.heads, cfg.ff) for _ in range(cfg.layers)]
        self.ln_out = LayerNorm(d)
        self._block = _window_block_mask(cfg.a, cfg.n_f)

    @property
    def config(self) -> EncoderConfig:
        return self._cfg

    # -- frame features -----------------------------------------------------------

    def frame_features(self, segments, first_segment: int = 0) -> Tensor:
        """Front-end features plus absolute positions.

        ``segments`` is (B, N, n_f, d_in) in feature mode or (N, C, n_f, H, W)
        in raw mode (one stream). Returns (B, N, n_f, d).
        """
        cfg = self._cfg
        if cfg.input_mode == "feature":
            x = segments if isinstance(segments, Tensor) else Tensor(segments)
            if x.ndim != 4 or x.shape[-1] != cfg.d_in:
                raise DimensionError(f"feature segments must be (B, N, n_f, {cfg.d_in}); got {x.shape}")
            feats = self.frontend(x)
        else:
            arr = segments.data if isinstance(segments, Tensor) else np.asarray(segments)
            if arr.ndim != 5:
                raise ModeError(f"raw segments must be (N, C, n_f, H, W); got {arr.shape}")
            feats = concatenate([self.frontend(Tensor(s))[None] for s in arr], axis=0)[None]
        n = feats.shape[1]
        start = first_segment * cfg.n_f
        stop = start + n * cfg.n_f
        if stop > cfg.max_positions:
            raise DimensionError(f"stream of {stop} frames exceeds max_positions={cfg.max_positions}")
        return feats + self.pos[start:stop].reshape(n, cfg.n_f, cfg.d_hidden)

    # -- windowed encoding --------------------------------------------------------

    def encode_windows(self, feats: Tensor, frame_mask: np.ndarray, num_layers: int | None = None) -> Tensor:
        """Encode every segment from its window of ``a`` segments.

        ``feats`` is (B, N, n_f, d) from :meth:`frame_features`; ``frame_mask``
        (B, N, n_f) marks real frames. Returns (B, N, n_f, d).
        """
        cfg = self._cfg
        a, n_f, d = cfg.a, cfg.n_f, cfg.d_hidden
        b, n = feats.shape[:2]
        if a > 1:
            lead = Tensor(np.zeros((b, a - 1, n_f, d), dtype=feats.dtype))
            padded = concatenate([lead, feats], axis=1)
            mpad = np.concatenate([np.zeros((b, a - 1, n_f), bool), frame_mask], axis=1)
        else:
            padded, mpad = feats, frame_mask
        x = concatenate([padded[:, j : j + n] for j in range(a)], axis=2)
        key_ok = np.concatenate([mpad[:, j : j + n] for j in range(a)], axis=2)
        mask = key_ok[:, :, None, None, :] & self._block[None, None, None]
        depth = len(self.layers) if num_layers is None else num_layers
        for layer in self.layers[:depth]:
            x = layer(x, mask)
        return self.ln_out(x[:, :, (a - 1) * n_f :])

    def encode_stream(self, stream: SegmentStream, num_layers: int | None = None) -> Tensor:
        """Encode a whole stream; returns (n, n_f, d)."""
        self._check_mode(stream)
        segs = stream.segments[None] if stream.mode == "feature" else stream.segments
        feats = self.frame_features(segs)
        return self.encode_windows(feats, stream.frame_mask()[None], num_layers)[0]

    def _check_mode(self, stream: SegmentStream) -> None:
        if stream.mode != self._cfg.input_mode:
            raise ModeError(f"{stream.mode} stream given to a {self._cfg.input_mode}-mode encoder")

    def start_stream(self, num_layers: int | None = None) -> "IncrementalEncoder":
        return IncrementalEncoder(self, num_layers)


class IncrementalEncoder:
    """Online encoding: push segments one at a time, get ``h_t`` back immediately."""

    def __init__(self, encoder: StreamEncoder, num_layers: int | None = None):
        self.encoder = encoder
        self.num_layers = num_layers
        self.t = 0
        cfg = encoder.config
        self._feats: deque = deque(maxlen=cfg.a)
        self._masks: deque = deque(maxlen=cfg.a)

    def push(self, segment: np.ndarray, pad: int = 0) -> Tensor:
        """Encode the next segment; ``pad`` trailing frames are padding. Returns (n_f, d)."""
        enc = self.encoder
        cfg = enc.config
        seg = np.asarray(segment)
        if cfg.input_mode == "feature":
            feats = enc.frame_features(seg[None, None], first_segment=self.t)
        else:
            feats = enc.frame_features(seg[None], first_segment=self.t)
        mask = np.ones(cfg.n_f, bool)
        if pad:
            mask[cfg.n_f - pad :] = False
        self._feats.append(feats[:, 0])
        self._masks.append(mask)
        self.t += 1
        missing = cfg.a - len(self._feats)
        parts = [Tensor(np.zeros((1, cfg.n_f, cfg.d_hidden), dtype=feats.dtype))] * missing + list(self._feats)
        masks = [np.zeros(cfg.n_f, bool)] * missing + list(self._masks)
        x = concatenate(parts, axis=1)[:, None]  # (1, 1, a*n_f, d)
        key_ok = np.concatenate(masks)[None, None]
        mask_full = key_ok[:, :, None, None, :] & enc._block[None, None, None]
        depth = len(enc.layers) if self.num_layers is None else self.num_layers
        for layer in enc.layers[:depth]:
            x = layer(x, mask_full)
        return enc.ln_out(x[:, :, (cfg.a - 1) * cfg.n_f :])[0, 0]


def encode_stream(stream: SegmentStream, encoder: StreamEncoder) -> list[Tensor]:
    """Per-segment representations ``[h_1, ..., h_n]``, each (n_f, d)."""
    out = encoder.encode_stream(stream)
    return [out[t] for t in range(out.shape[0])]
