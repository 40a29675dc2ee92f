"""The full streaming lip-reading transducer.

Training runs teacher-forced over padded batches (windowed encoder, memory
advanced segment by segment in lock-step, one joint lattice per utterance).
Decoding runs one stream at a time through the incremental encoder, the
single-stream memory API and the cached LM, which is the same computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .data import SegmentStream, Utterance
from .decoder import Hypothesis, JointNetwork, LanguageModel, greedy_search, lattice_views
from .decoder.losses import ctc_nll, transducer_nll
from .encoder import StreamEncoder
from .errors import SpecError
from .layers import Linear, Module
from .memory import BatchMemory, MemoryState, Summarizer, average_frames, enhance, update
from .numerics import Tensor, concatenate, log_softmax, make_rng, no_grad, stack

# parameter groups that a stage may freeze
GROUPS = ("frontend", "encoder", "memory", "lm", "joint", "ctc_head")


@dataclass
class Batch:
    """Padded feature-mode batch."""

    uids: list[str]
    feats: np.ndarray  # (B, N, n_f, d_in)
    frame_mask: np.ndarray  # (B, N, n_f)
    n_lens: np.ndarray
    frame_lens: np.ndarray
    tokens: np.ndarray  # (B, U), 0-padded
    u_lens: np.ndarray

    def __len__(self) -> int:
        return len(self.uids)


def make_batch(utts: list[Utterance]) -> Batch:
    n_f = utts[0].stream.n_f
    d_in = utts[0].stream.segments.shape[-1]
    n_max = max(u.stream.n for u in utts)
    u_max = max(u.u for u in utts)
    b = len(utts)
    feats = np.zeros((b, n_max, n_f, d_in))
    mask = np.zeros((b, n_max, n_f), bool)
    tokens = np.zeros((b, u_max), np.int64)
    for j, utt in enumerate(utts):
        s = utt.stream
        feats[j, : s.n] = s.segments
        mask[j, : s.n] = s.frame_mask()
        tokens[j, : utt.u] = utt.tokens
    return Batch(
        [u.uid for u in utts],
        feats,
        mask,
        np.array([u.stream.n for u in utts]),
        np.array([u.stream.num_frames for u in utts]),
        tokens,
        np.array([u.u for u in utts]),
    )


class StreamingTransducer(Module):
    def __init__(self, config: Config, seed: int | None = None):
        self._config = config
        enc, mem, dec = config.encoder, config.memory, config.decoder
        if dec.vocab_size < 2:
            raise SpecError("vocabulary needs the blank plus at least one token")
        d = enc.d_hidden
        rng = make_rng(config.train.seed if seed is None else seed, "init")
        self.encoder = StreamEncoder(enc, rng)
        self.memory = Summarizer(mem.summarize, enc.n_f, d)
        self.lm = LanguageModel(rng, dec.vocab_size, d, dec.lm_layers, dec.heads, enc.ff, max_len=dec.max_tokens)
        self.joint = JointNetwork(rng, d, dec.d_joint or d, dec.vocab_size)
        self.ctc_head = Linear(rng, d, dec.vocab_size)

    @property
    def config(self) -> Config:
        return self._config

    def group(self, name: str) -> list[Tensor]:
        if name == "frontend":
            return self.encoder.frontend.parameters()
        if name == "encoder":
            return self.encoder.parameters()
        if name not in GROUPS:
            raise SpecError(f"unknown parameter group {name!r}; expected one of {GROUPS}")
        return getattr(self, name).parameters()

    # -- teacher-forced training path ------------------------------------------------

    def encode(self, batch: Batch, num_layers: int | None = None) -> Tensor:
        feats = self.encoder.frame_features(batch.feats)
        return self.encoder.encode_windows(feats, batch.frame_mask, num_layers)

    def with_memory(self, h: Tensor, batch: Batch) -> Tensor:
        """Memory-enhanced features (B, N, n_f, d)."""
        cfg = self._config.memory
        if not cfg.enabled:
            return h
        mem = BatchMemory(len(batch), h.shape[-1], cfg, self.memory, h.dtype)
        steps = [mem.step(h[:, t], batch.frame_mask[:, t], t < batch.n_lens) for t in range(h.shape[1])]
        return stack(steps, axis=1)

    def segment_vectors(self, h: Tensor, frame_mask: np.ndarray) -> Tensor:
        return average_frames(h, frame_mask)

    def lattice(self, batch: Batch, num_layers: int | None = None) -> Tensor:
        """Joint log-probabilities (B, rows, U+1, V)."""
        h = self.with_memory(self.encode(batch, num_layers), batch)
        v = self.segment_vectors(h, batch.frame_mask)
        if not self._config.decoder.terminal_blank:
            v = concatenate([Tensor(np.zeros((len(batch), 1, v.shape[-1]), dtype=v.dtype)), v], axis=1)
        w = self.lm.encode_batch(batch.tokens)
        return self.joint(v[:, :, None, :], w[:, None, :, :])

    def transducer_losses(self, batch: Batch, num_layers: int | None = None) -> Tensor:
        lat = self.lattice(batch, num_layers)
        blank, emit = lattice_views(lat, batch.tokens)
        return transducer_nll(blank, emit, batch.n_lens, batch.u_lens, self._config.decoder.terminal_blank)

    def ctc_losses(self, batch: Batch, num_layers: int | None = None) -> Tensor:
        h = self.encode(batch, num_layers)
        b, n, n_f, d = h.shape
        logp = log_softmax(self.ctc_head(h.reshape(b, n * n_f, d)))
        return ctc_nll(logp, batch.frame_lens, batch.tokens, batch.u_lens)

    def losses(self, batch: Batch, loss: str, num_layers: int | None = None) -> Tensor:
        if loss == "ctc":
            return self.ctc_losses(batch, num_layers)
        return self.transducer_losses(batch, num_layers)

    # -- streaming decode -------------------------------------------------------------

    def decode(self, stream: SegmentStream, num_layers: int | None = None) -> Hypothesis:
        """Greedy frame-synchronised decoding of one stream."""
        cfg = self._config
        with no_grad():
            inc = self.encoder.start_stream(num_layers)
            state = {"mem": MemoryState.empty(cfg.memory.k, cfg.encoder.d_hidden, self.encoder.pos.dtype)}
            masks = stream.frame_mask()

            def begin(t):
                pad = stream.pad if t == stream.n - 1 else 0
                h = inc.push(stream.segments[t], pad)
                if cfg.memory.enabled:
                    h_tilde, alpha = enhance(h, state["mem"], self.memory, masks[t])
                    state["pending"] = (h, alpha, t)
                else:
                    h_tilde = h
                return average_frames(h_tilde, masks[t])

            def end(t):
                if cfg.memory.enabled:
                    h, alpha, _ = state.pop("pending")
                    state["mem"] = update(state["mem"], h, alpha, cfg.memory, self.memory, masks[t])

            return greedy_search(
                stream.n,
                begin,
                lambda v, ctx: self.joint(v, ctx.h).data,
                self.lm.advance,
                self.lm.start(),
                cfg.decoder.max_tokens_per_segment,
                end,
            )
