"""Model, memory, decoder and training configuration.

Every constant has a default. Where the method publishes a value (window
``a=2``, ``n_f=3``, ``k=20``, ``gamma_e = 0.6*log2(k)``, ``gamma_m=0.7``,
``d_hidden=256``, four encoder and LM layers, six C3D layers, Adam with
``lr0=5e-4`` and per-update shrink 0.99) that value is the default. Epoch
counts default to a desk-scale plan. ``DESK`` is a small preset for the
synthetic corpora.

Configs serialise to JSON with one object per section::

    {"encoder": {...}, "memory": {...}, "decoder": {...}, "train": {...}}
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import SpecError

STRATEGIES = ("fifo", "lfu", "lfu_momentum")
SUMMARIZERS = ("conv", "maxpool", "avgpool")
STAGE_NAMES = ("ctc_pretrain", "warmup_shallow", "warmup_deep", "full")


@dataclass
class C3DStage:
    channels: int
    kernel: int = 3
    pool: bool = True


def _default_c3d() -> list[C3DStage]:
    return [
        C3DStage(32, 3, True),
        C3DStage(32, 3, False),
        C3DStage(64, 3, True),
        C3DStage(64, 3, False),
        C3DStage(96, 3, True),
        C3DStage(96, 3, False),
    ]


@dataclass
class EncoderConfig:
    a: int = 2
    n_f: int = 3
    layers: int = 4
    d_hidden: int = 256
    heads: int = 4
    d_ff: int = 0  # 0 means 4 * d_hidden
    input_mode: str = "feature"
    d_in: int = 16
    in_channels: int = 1
    frame_hw: tuple[int, int] = (60, 100)
    c3d: list[C3DStage] = field(default_factory=_default_c3d)
    max_positions: int = 1024

    def __post_init__(self):
        self.frame_hw = tuple(self.frame_hw)
        self.c3d = [s if isinstance(s, C3DStage) else C3DStage(**s) for s in self.c3d]
        if self.a < 1:
            raise SpecError(f"window a must be >= 1, got {self.a}")
        if self.n_f < 1:
            raise SpecError(f"n_f must be >= 1, got {self.n_f}")
        if self.input_mode not in ("raw", "feature"):
            raise SpecError(f"input_mode must be raw or feature, got {self.input_mode!r}")
        if self.d_hidden % self.heads:
            raise SpecError(f"d_hidden {self.d_hidden} not divisible by heads {self.heads}")

    @property
    def ff(self) -> int:
        return self.d_ff or 4 * self.d_hidden


@dataclass
class MemoryConfig:
    k: int = 20
    gamma_e: float | None = None  # None means 0.6 * log2(k)
    gamma_m: float = 0.7
    strategy: str = "lfu_momentum"
    summarize: str = "avgpool"
    initial_count: float = 1.0
    gate_during_fill: bool = False
    enabled: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise SpecError(f"memory size k must be >= 1, got {self.k}")
        if not 0.0 <= self.gamma_m <= 1.0:
            raise SpecError(f"gamma_m must lie in [0, 1], got {self.gamma_m}")
        if self.strategy not in STRATEGIES:
            raise SpecError(f"unknown memory strategy {self.strategy!r}")
        if self.summarize not in SUMMARIZERS:
            raise SpecError(f"unknown summarize operator {self.summarize!r}")

    @property
    def entropy_threshold(self) -> float:
        return 0.6 * math.log2(self.k) if self.gamma_e is None else self.gamma_e


@dataclass
class DecoderConfig:
    vocab_size: int = 9  # including blank at index 0
    lm_layers: int = 4
    heads: int = 4
    d_joint: int = 0  # 0 means d_hidden
    max_tokens_per_segment: int = 3
    terminal_blank: bool = True
    max_tokens: int = 256


@dataclass
class StageConfig:
    name: str
    epochs: int
    encoder_layers: int
    loss: str
    frozen: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.name not in STAGE_NAMES:
            raise SpecError(f"unknown stage {self.name!r}")
        if self.epochs < 0:
            raise SpecError("epochs must be >= 0")
        if self.loss not in ("ctc", "transducer"):
            raise SpecError(f"unknown loss {self.loss!r}")


def default_stages(epochs=(5, 5, 5, 30), shallow: int = 2, deep: int = 4) -> list[StageConfig]:
    e1, e2, e3, e4 = epochs
    return [
        StageConfig("ctc_pretrain", e1, shallow, "ctc"),
        StageConfig("warmup_shallow", e2, shallow, "transducer"),
        StageConfig("warmup_deep", e3, deep, "transducer", ["frontend"]),
        StageConfig("full", e4, deep, "transducer"),
    ]


@dataclass
class TrainConfig:
    lr0: float = 5e-4
    shrink: float = 0.99
    batch_size: int = 16
    clip_norm: float = 5.0
    stages: list[StageConfig] = field(default_factory=default_stages)
    curriculum: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    dev_fraction: float = 0.2
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        self.curriculum = tuple(self.curriculum)
        self.stages = [s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages]
        if not 0 < self.shrink <= 1:
            raise SpecError(f"shrink must lie in (0, 1], got {self.shrink}")
        order = [STAGE_NAMES.index(s.name) for s in self.stages]
        if order != sorted(order):
            raise SpecError("stages must follow ctc_pretrain, warmup_shallow, warmup_deep, full order")


@dataclass
class Config:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise SpecError(f"unknown config sections: {sorted(unknown)}")
        parts = {}
        for f, sub in (("encoder", EncoderConfig), ("memory", MemoryConfig), ("decoder", DecoderConfig), ("train", TrainConfig)):
            values = d.get(f, {})
            bad = set(values) - {x.name for x in fields(sub)}
            if bad:
                raise SpecError(f"unknown keys in {f}: {sorted(bad)}")
            parts[f] = sub(**values)
        return cls(**parts)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def with_overrides(self, **sections) -> "Config":
        """Return a copy with per-section field overrides, e.g. ``memory={"k": 10}``."""
        new = {}
        for name in ("encoder", "memory", "decoder", "train"):
            cur = getattr(self, name)
            new[name] = replace(cur, **sections.get(name, {}))
        return Config(**new)


def desk_config(vocab_size: int = 9, d_in: int = 16, n_f: int = 3, a: int = 2, k: int = 10, seed: int = 0) -> Config:
    """Small model and plan sized for the synthetic corpora on one CPU core."""
    return Config(
        encoder=EncoderConfig(a=a, n_f=n_f, layers=4, d_hidden=32, heads=2, d_ff=64, d_in=d_in, max_positions=256),
        memory=MemoryConfig(k=k),
        decoder=DecoderConfig(vocab_size=vocab_size, lm_layers=1, heads=2),
        train=TrainConfig(lr0=3e-3, shrink=0.999, batch_size=16, stages=default_stages((5, 5, 5, 30)), seed=seed),
    )
