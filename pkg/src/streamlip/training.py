"""Staged training: CTC pre-training, warm-up, full transducer training.

Each stage builds a fresh Adam whose learning rate after ``j`` updates of
that stage is ``lr0 * shrink**j``. Inside a stage a length curriculum admits
utterances with ``n <= threshold`` where the threshold walks through
quantiles of ``n`` as the stage's epochs progress. Batches group utterances
of similar length and are visited in a seeded random order.

SLRC checkpoint layout (little-endian)::

    b"SLRC" | u16 version | u32 meta_len | meta JSON (config echo + stage)
    | u32 count | count x (u16 name_len | name | u8 ndim | u32[ndim] shape | f32 data)

Metrics log: tab-separated ``epoch stage loss wer al_nca_ms`` with a header.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, StageConfig
from .data import Corpus
from .errors import DataError, FormatError, TrainingError
from .evaluation import evaluate
from .model import StreamingTransducer, make_batch
from .numerics import Adam, Tensor, make_rng, no_grad

SLRC_MAGIC = b"SLRC"
SLRC_VERSION = 1
METRICS_HEADER = "epoch\tstage\tloss\twer\tal_nca_ms"


# -- curriculum --------------------------------------------------------------------


@dataclass
class Curriculum:
    """Length thresholds at the given quantiles of ``n``, stepped evenly over ``epochs``."""

    quantiles: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    epochs: int = 4

    def step(self, epoch: int) -> int:
        if epoch >= self.epochs:
            return len(self.quantiles) - 1
        return min(epoch * len(self.quantiles) // max(self.epochs, 1), len(self.quantiles) - 1)

    def threshold(self, lengths: np.ndarray, epoch: int) -> float:
        if epoch >= self.epochs:
            return float(np.max(lengths))
        q = self.quantiles[self.step(epoch)]
        return float(np.quantile(lengths, q, method="inverted_cdf"))


def curriculum_order(corpus: Corpus, schedule: Curriculum, epoch: int) -> list[str]:
    """Ids of utterances admitted at ``epoch`` (0-based), in corpus order."""
    if len(corpus) == 0:
        raise DataError("curriculum needs a nonempty corpus")
    lengths = np.array([u.stream.n for u in corpus])
    limit = schedule.threshold(lengths, epoch)
    return [u.uid for u, n in zip(corpus, lengths) if n <= limit]


def length_batches(utts: list, batch_size: int, rng: np.random.Generator) -> list[list]:
    """Shuffle, sort by segment count (stable), chunk, then shuffle the chunk order."""
    order = rng.permutation(len(utts))
    order = sorted(order, key=lambda i: utts[i].stream.n)
    chunks = [[utts[i] for i in order[k : k + batch_size]] for k in range(0, len(order), batch_size)]
    return [chunks[i] for i in rng.permutation(len(chunks))]


# -- freezing ----------------------------------------------------------------------


def checksum(params: list[Tensor]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# -- stages ------------------------------------------------------------------------


@dataclass
class EpochLog:
    stage: str
    epoch: int  # global epoch counter, 1-based
    loss: float
    wer: float
    al: float
    lrs: list[float] = field(default_factory=list)

    def line(self) -> str:
        return f"{self.epoch}\t{self.stage}\t{self.loss:.6f}\t{self.wer:.6f}\t{self.al:.3f}"


def corpus_loss(model: StreamingTransducer, corpus: Corpus, loss: str, num_layers: int, batch_size: int) -> float:
    """Mean per-utterance loss over ``corpus`` without gradients."""
    total = 0.0
    utts = sorted(corpus.utterances, key=lambda u: u.stream.n)
    with no_grad():
        for k in range(0, len(utts), batch_size):
            total += float(model.losses(make_batch(utts[k : k + batch_size]), loss, num_layers).data.astype(np.float64).sum())
    return total / max(len(utts), 1)


def run_stage(
    stage: StageConfig,
    model: StreamingTransducer,
    train_set: Corpus,
    rng: np.random.Generator,
    dev_set: Corpus | None = None,
    first_epoch: int = 1,
    log_lines: list[str] | None = None,
) -> list[EpochLog]:
    """Train one stage in place; returns one log entry per epoch."""
    cfg = model.config.train
    frozen = [p for g in stage.frozen for p in model.group(g)]
    frozen_ids = {id(p) for p in frozen}
    before = checksum(frozen)
    trainable = [p for p in model.parameters() if id(p) not in frozen_ids]
    for p in frozen:
        p.requires_grad = False
    opt = Adam(trainable, cfg.lr0, cfg.shrink, clip_norm=cfg.clip_norm)
    schedule = Curriculum(cfg.curriculum, stage.epochs)
    by_id = train_set.by_id()
    logs = []
    try:
        for e in range(stage.epochs):
            admitted = [by_id[i] for i in curriculum_order(train_set, schedule, e)]
            lrs = []
            for batch_utts in length_batches(admitted, cfg.batch_size, rng):
                batch = make_batch(batch_utts)
                opt.zero_grad()
                loss = model.losses(batch, stage.loss, stage.encoder_layers).mean()
                if not np.isfinite(loss.data):
                    raise TrainingError(
                        f"non-finite loss in stage {stage.name} at update {opt.steps}", stage.name, opt.steps
                    )
                loss.backward()
                lrs.append(opt.lr)
                opt.step()
            train_loss = corpus_loss(model, train_set, stage.loss, stage.encoder_layers, cfg.batch_size)
            if not math.isfinite(train_loss):
                raise TrainingError(f"non-finite training loss after stage {stage.name} epoch {e + 1}", stage.name, opt.steps)
            wer = al = math.nan
            epoch_no = first_epoch + e
            if dev_set is not None and len(dev_set) and cfg.eval_every and (e + 1) % cfg.eval_every == 0:
                result = evaluate(model, dev_set, stage.encoder_layers)
                wer, al = result.rate, result.al
            entry = EpochLog(stage.name, epoch_no, train_loss, wer, al, lrs)
            logs.append(entry)
            if log_lines is not None:
                log_lines.append(entry.line())
    finally:
        for p in frozen:
            p.requires_grad = True
    if checksum(frozen) != before:
        raise TrainingError(f"frozen parameters changed during stage {stage.name}", stage.name, opt.steps)
    return logs


@dataclass
class TrainResult:
    model: StreamingTransducer
    history: list[EpochLog]
    checkpoints: list[Path]

    def metrics_log(self) -> str:
        return "\n".join([METRICS_HEADER] + [h.line() for h in self.history]) + "\n"


def train(config: Config, corpus: Corpus, out_dir: str | Path | None = None, model: StreamingTransducer | None = None) -> TrainResult:
    """Run every stage of ``config.train`` on the train part of ``corpus``.

    With ``out_dir`` a checkpoint ``<stage>.slrc`` is written after each stage
    and the metrics log goes to ``metrics.tsv``.
    """
    if len(corpus) == 0:
        raise DataError("cannot train on an empty corpus")
    train_set, dev_set = corpus.split(config.train.dev_fraction)
    model = model or StreamingTransducer(config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history: list[EpochLog] = []
    ckpts: list[Path] = []
    lines = [METRICS_HEADER]
    for k, stage in enumerate(config.train.stages):
        rng = make_rng(config.train.seed, "shuffle", k)
        history += run_stage(stage, model, train_set, rng, dev_set, len(history) + 1, lines)
        if out is not None:
            path = out / f"{stage.name}.slrc"
            write_checkpoint(path, model, stage)
            ckpts.append(path)
            (out / "metrics.tsv").write_text("\n".join(lines) + "\n")
    return TrainResult(model, history, ckpts)


# -- checkpoints -------------------------------------------------------------------


def write_checkpoint(path_or_buf, model: StreamingTransducer, stage: StageConfig | None = None) -> None:
    meta = {"config": model.config.to_dict()}
    if stage is not None:
        meta["stage"] = stage.name
        meta["encoder_layers"] = stage.encoder_layers
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    params = list(model.named_parameters())
    buf = io.BytesIO()
    buf.write(SLRC_MAGIC)
    buf.write(struct.pack("<HI", SLRC_VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(params)))
    for name, p in params:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    data = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(data)
    else:
        Path(path_or_buf).write_bytes(data)


def read_checkpoint(path_or_buf) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns ``(meta, {name: float32 array})``."""
    data = path_or_buf.read() if hasattr(path_or_buf, "read") else Path(path_or_buf).read_bytes()
    if data[:4] != SLRC_MAGIC:
        raise FormatError("not an SLRC checkpoint (bad magic)")
    try:
        version, meta_len = struct.unpack_from("<HI", data, 4)
        if version != SLRC_VERSION:
            raise FormatError(f"unsupported SLRC version {version}")
        pos = 4 + struct.calcsize("<HI")
        meta = json.loads(data[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in checkpoint")
    return meta, params


def load_model(path) -> tuple[StreamingTransducer, dict]:
    """Rebuild a model from a checkpoint; returns ``(model, meta)``."""
    meta, params = read_checkpoint(path)
    model = StreamingTransducer(Config.from_dict(meta["config"]))
    own = dict(model.named_parameters())
    if set(own) != set(params):
        raise FormatError(f"checkpoint parameters do not match the model: {sorted(set(own) ^ set(params))[:5]}")
    for name, value in params.items():
        if own[name].shape != value.shape:
            raise FormatError(f"{name}: checkpoint shape {value.shape} vs model {own[name].shape}")
        own[name].data = value.astype(own[name].dtype)
    return model, meta
