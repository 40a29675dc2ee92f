"""Language model, joint network, transducer/CTC losses and greedy decoding."""

from .joint import JointNetwork, joint
from .lm import LanguageModel, LMState, lm_encode
from .losses import ctc_loss, ctc_min_frames, ctc_nll, lattice_views, transducer_loss, transducer_nll
from .search import Hypothesis, greedy_from_table, greedy_search

__all__ = [
    "Hypothesis",
    "JointNetwork",
    "LMState",
    "LanguageModel",
    "ctc_loss",
    "ctc_min_frames",
    "ctc_nll",
    "greedy_from_table",
    "greedy_search",
    "joint",
    "lattice_views",
    "lm_encode",
    "transducer_loss",
    "transducer_nll",
]
