"""Segment streams, the synthetic streaming corpus, and the SLRF corpus file.

SLRF layout (all integers unsigned little-endian)::

    header   b"SLRF" | u16 version | u32 d_in | u32 n_f | f64 T_s | u32 count
    record   u16 id_len | id (utf-8) | u32 n | u8 padded | u32 pad_frames
             | u32 u | u32[u] token ids | u32[u] ground-truth segment (1-based)
             | f32[n * n_f * d_in] segment features, row-major (segment, frame, dim)
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, SpecError
from .numerics.rng import make_rng

SLRF_MAGIC = b"SLRF"
SLRF_VERSION = 1


@dataclass
class SegmentStream:
    """A video or feature stream cut into ``n`` segments of ``n_f`` frames.

    ``segments`` is (n, n_f, d_in) in feature mode or (n, C, n_f, H, W) in raw
    mode. The last ``pad`` frames of the final segment are zero padding.
    """

    segments: np.ndarray
    n_f: int
    T_s: float = 40.0
    pad: int = 0
    mode: str = "feature"

    def __post_init__(self):
        frame_axis = 1 if self.mode == "feature" else 2
        if self.segments.ndim != (3 if self.mode == "feature" else 5):
            raise DataError(f"{self.mode} stream has wrong rank {self.segments.shape}")
        if self.segments.shape[frame_axis] != self.n_f:
            raise DataError(f"segments have {self.segments.shape[frame_axis]} frames, expected n_f={self.n_f}")
        if not 0 <= self.pad < self.n_f:
            raise DataError(f"pad must lie in [0, n_f), got {self.pad}")

    @property
    def n(self) -> int:
        return self.segments.shape[0]

    @property
    def num_frames(self) -> int:
        return self.n * self.n_f - self.pad

    def frame_mask(self) -> np.ndarray:
        """(n, n_f) boolean: true for real frames, false for padding."""
        mask = np.ones((self.n, self.n_f), dtype=bool)
        if self.pad:
            mask[-1, self.n_f - self.pad :] = False
        return mask

    @classmethod
    def from_frames(cls, frames: np.ndarray, n_f: int, T_s: float = 40.0) -> "SegmentStream":
        """Chunk (F, d_in) frames into segments, zero-padding the last one."""
        frames = np.asarray(frames, dtype=np.float32)
        if len(frames) == 0:
            raise DataError("stream has no frames")
        n = math.ceil(len(frames) / n_f)
        pad = n * n_f - len(frames)
        padded = np.concatenate([frames, np.zeros((pad,) + frames.shape[1:], dtype=frames.dtype)])
        return cls(padded.reshape((n, n_f) + frames.shape[1:]), n_f, T_s, pad)

    def prefix(self, t: int) -> "SegmentStream":
        """The first ``t`` segments (padding is kept only if the last segment is included)."""
        return SegmentStream(self.segments[:t], self.n_f, self.T_s, self.pad if t == self.n else 0, self.mode)


@dataclass
class Utterance:
    uid: str
    stream: SegmentStream
    tokens: np.ndarray
    gt_segments: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def u(self) -> int:
        return len(self.tokens)


@dataclass
class Corpus:
    d_in: int
    n_f: int
    T_s: float
    utterances: list[Utterance]

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def by_id(self) -> dict[str, Utterance]:
        return {u.uid: u for u in self.utterances}

    def subset(self, indices) -> "Corpus":
        return Corpus(self.d_in, self.n_f, self.T_s, [self.utterances[i] for i in indices])

    def split(self, dev_fraction: float) -> tuple["Corpus", "Corpus"]:
        """Deterministic split: every ``round(1/dev_fraction)``-th utterance goes to dev."""
        if not self.utterances:
            raise DataError("empty corpus")
        if dev_fraction <= 0:
            return self, Corpus(self.d_in, self.n_f, self.T_s, [])
        stride = max(2, round(1.0 / dev_fraction))
        dev = [i for i in range(len(self)) if i % stride == stride - 1]
        train = [i for i in range(len(self)) if i % stride != stride - 1]
        return self.subset(train), self.subset(dev)


# -- synthetic generator ------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic streaming corpus.

    ``vocab_size`` counts real tokens; ids run 1..vocab_size and 0 is the blank.
    """

    vocab_size: int = 8
    u_range: tuple[int, int] = (2, 5)
    frames_per_token_range: tuple[int, int] = (2, 4)
    d_in: int = 16
    noise_std: float = 0.3
    n_f: int = 3
    T_s: float = 40.0
    count: int = 500
    seed: int = 0
    max_frames: int | None = None

    def validate(self) -> None:
        lo, hi = self.u_range
        flo, fhi = self.frames_per_token_range
        if self.vocab_size < 2:
            raise SpecError("vocab_size must be >= 2")
        if not 1 <= lo <= hi:
            raise SpecError(f"bad u_range {self.u_range}")
        if not 1 <= flo <= fhi:
            raise SpecError(f"frames per token must be >= 1, got {self.frames_per_token_range}")
        if self.noise_std < 0 or self.n_f < 1 or self.count < 1 or self.d_in < 1:
            raise SpecError("noise_std, n_f, count and d_in must be non-negative / positive")
        if self.max_frames is not None and lo * flo > self.max_frames:
            raise SpecError(f"u_min * min_frames = {lo * flo} exceeds max_frames {self.max_frames}")


def token_prototypes(spec: SyntheticSpec) -> np.ndarray:
    """(vocab_size + 1, d_in) prototypes; row 0 (blank) is unused and zero."""
    rng = make_rng(spec.seed, "prototypes")
    protos = np.zeros((spec.vocab_size + 1, spec.d_in), dtype=np.float32)
    protos[1:] = rng.normal(size=(spec.vocab_size, spec.d_in)).astype(np.float32)
    return protos


def _sample_utterance(spec: SyntheticSpec, protos: np.ndarray, index: int) -> Utterance:
    rng = make_rng(spec.seed, "datagen", index)
    lo, hi = spec.u_range
    flo, fhi = spec.frames_per_token_range
    while True:
        u = int(rng.integers(lo, hi + 1))
        # no immediate repeats: a repeated token would be one indistinguishable run of frames
        tokens = [int(rng.integers(1, spec.vocab_size + 1))]
        for _ in range(u - 1):
            nxt = int(rng.integers(1, spec.vocab_size))
            tokens.append(nxt if nxt < tokens[-1] else nxt + 1)
        lengths = rng.integers(flo, fhi + 1, size=u)
        if spec.max_frames is None or lengths.sum() <= spec.max_frames:
            break
    frame_tokens = np.repeat(np.array(tokens), lengths)
    frames = protos[frame_tokens]
    if spec.noise_std > 0:
        frames = frames + rng.normal(scale=spec.noise_std, size=frames.shape).astype(np.float32)
    stream = SegmentStream.from_frames(frames.astype(np.float32), spec.n_f, spec.T_s)
    last_frame = np.cumsum(lengths) - 1
    gt = last_frame // spec.n_f + 1
    return Utterance(f"utt{index:05d}", stream, np.array(tokens, dtype=np.int64), gt.astype(np.int64))


def generate(spec: SyntheticSpec) -> Corpus:
    """Sample a corpus; each utterance uses its own seeded stream, so generation order is irrelevant."""
    spec.validate()
    protos = token_prototypes(spec)
    utts = [_sample_utterance(spec, protos, i) for i in range(spec.count)]
    return Corpus(spec.d_in, spec.n_f, float(spec.T_s), utts)


# -- SLRF file ------------------------------------------------------------------------


def write_corpus(corpus: Corpus, path_or_buf) -> None:
    buf = io.BytesIO()
    buf.write(SLRF_MAGIC)
    buf.write(struct.pack("<HIIdI", SLRF_VERSION, corpus.d_in, corpus.n_f, corpus.T_s, len(corpus)))
    for utt in corpus:
        s = utt.stream
        if s.mode != "feature" or s.segments.shape[1:] != (corpus.n_f, corpus.d_in):
            raise FormatError(f"{utt.uid}: segment shape {s.segments.shape} does not match header")
        uid = utt.uid.encode("utf-8")
        buf.write(struct.pack("<H", len(uid)))
        buf.write(uid)
        buf.write(struct.pack("<IBII", s.n, 1 if s.pad else 0, s.pad, utt.u))
        buf.write(np.asarray(utt.tokens, dtype="<u4").tobytes())
        gt = utt.gt_segments if len(utt.gt_segments) == utt.u else np.zeros(utt.u)
        buf.write(np.asarray(gt, dtype="<u4").tobytes())
        buf.write(np.ascontiguousarray(s.segments, dtype="<f4").tobytes())
    data = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(data)
    else:
        Path(path_or_buf).write_bytes(data)


def read_corpus(path_or_buf) -> Corpus:
    if hasattr(path_or_buf, "read"):
        data = path_or_buf.read()
    else:
        data = Path(path_or_buf).read_bytes()
    view = memoryview(data)
    if bytes(view[:4]) != SLRF_MAGIC:
        raise FormatError("not an SLRF corpus (bad magic)")
    pos = 4
    try:
        version, d_in, n_f, T_s, count = struct.unpack_from("<HIIdI", view, pos)
        if version != SLRF_VERSION:
            raise FormatError(f"unsupported SLRF version {version}")
        pos += struct.calcsize("<HIIdI")
        utts = []
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            uid = bytes(view[pos : pos + id_len]).decode("utf-8")
            pos += id_len
            n, padded, pad, u = struct.unpack_from("<IBII", view, pos)
            pos += struct.calcsize("<IBII")
            if bool(padded) != bool(pad):
                raise FormatError(f"{uid}: padded flag disagrees with pad length")
            tokens = np.frombuffer(data, dtype="<u4", count=u, offset=pos).astype(np.int64)
            pos += 4 * u
            gt = np.frombuffer(data, dtype="<u4", count=u, offset=pos).astype(np.int64)
            pos += 4 * u
            size = n * n_f * d_in
            feats = np.frombuffer(data, dtype="<f4", count=size, offset=pos).astype(np.float32)
            pos += 4 * size
            stream = SegmentStream(feats.reshape(n, n_f, d_in), n_f, T_s, pad)
            utts.append(Utterance(uid, stream, tokens, gt))
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"truncated or corrupt SLRF corpus: {exc}") from exc
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last record")
    return Corpus(d_in, n_f, T_s, utts)
