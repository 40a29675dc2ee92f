"""Frame-synchronised greedy decoding.

At each segment the decoder keeps taking the argmax of the joint
distribution: a blank (or hitting the per-segment cap) reads the next
segment, anything else is emitted and fed to the LM. Ties go to the lowest
index, so the blank wins a tie.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..errors import DimensionError


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)
    segments: list[int] = field(default_factory=list)  # 1-based n(w_i)
    logprob: float = 0.0
    consumed: int = 0

    def __post_init__(self):
        if any(b < a for a, b in zip(self.segments, self.segments[1:])):
            raise ValueError("emission segments must be nondecreasing")


def greedy_search(
    n: int,
    begin_segment: Callable[[int], Any],
    distribution: Callable[[Any, Any], np.ndarray],
    advance: Callable[[Any, int], Any],
    context: Any,
    max_per_segment: int = 3,
    end_segment: Callable[[int], None] | None = None,
    blank: int = 0,
) -> Hypothesis:
    """Generic loop over ``n`` segments.

    ``begin_segment(t)`` returns the visual state for 0-based segment ``t``;
    ``distribution(visual, context)`` gives log-probabilities; ``advance``
    returns the context after emitting a token; ``end_segment(t)`` runs once
    the decoder moves past segment ``t``.
    """
    hyp = Hypothesis()
    for t in range(n):
        visual = begin_segment(t)
        emitted = 0
        while True:
            logp = np.asarray(distribution(visual, context))
            k = int(np.argmax(logp))
            if k == blank:
                hyp.logprob += float(logp[k])
                break
            hyp.tokens.append(k)
            hyp.segments.append(t + 1)
            hyp.logprob += float(logp[k])
            context = advance(context, k)
            emitted += 1
            if emitted >= max_per_segment:
                break
        if end_segment is not None:
            end_segment(t)
        hyp.consumed += 1
    return hyp


def greedy_from_table(table: np.ndarray, max_per_segment: int = 3, blank: int = 0) -> Hypothesis:
    """Greedy decode a frozen joint table ``table[t, i]`` (segment, tokens emitted so far)."""
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 3:
        raise DimensionError(f"table must be (n, prefixes, V); got {table.shape}")
    width = table.shape[1]

    def distribution(t, i):
        if i >= width:
            raise DimensionError(f"table has {width} prefix columns; decoder reached prefix {i}")
        return table[t, i]

    return greedy_search(table.shape[0], lambda t: t, distribution, lambda i, k: i + 1, 0, max_per_segment, blank=blank)
