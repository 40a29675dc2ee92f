"""Streaming lip-reading transducer with a memory-enhanced, time-restricted encoder.

Subpackages: ``numerics`` (numpy autodiff), ``decoder`` (losses, LM, joint,
greedy search). Modules: ``encoder``, ``memory``, ``model``, ``training``,
``metrics``, ``evaluation``, ``data``, ``config``, ``cli``, ``selftest``.
"""

from .config import Config, desk_config
from .data import SyntheticSpec, generate, read_corpus, write_corpus
from .model import StreamingTransducer
from .training import load_model, train

__version__ = "0.1.0"

__all__ = [
    "Config",
    "StreamingTransducer",
    "SyntheticSpec",
    "desk_config",
    "generate",
    "load_model",
    "read_corpus",
    "train",
    "write_corpus",
]
