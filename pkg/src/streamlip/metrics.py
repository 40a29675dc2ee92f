"""Error rates, non-computation-aware latency and monotonic alignments."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UndefinedMetricError

# backtrace preference when several edits reach the same cost
_OPS = ("match", "sub", "del", "ins")


@dataclass
class AlignmentReport:
    """``pairs`` holds (ref_token | None, hyp_token | None, op) in sequence order."""

    pairs: list[tuple] = field(default_factory=list)

    def count(self, op: str) -> int:
        return sum(1 for *_, o in self.pairs if o == op)

    @property
    def S(self) -> int:
        return self.count("sub")

    @property
    def D(self) -> int:
        return self.count("del")

    @property
    def I(self) -> int:  # noqa: E743
        return self.count("ins")

    @property
    def matches(self) -> int:
        return self.count("match")

    @property
    def M(self) -> int:
        return sum(1 for r, _, _ in self.pairs if r is not None)

    @property
    def distance(self) -> int:
        return self.S + self.D + self.I

    def ref(self) -> list:
        return [r for r, _, _ in self.pairs if r is not None]

    def hyp(self) -> list:
        return [h for _, h, _ in self.pairs if h is not None]


def edit_align(ref: Sequence, hyp: Sequence) -> AlignmentReport:
    """Minimal unit-cost alignment; ties prefer match, then sub, del, ins."""
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(diag, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    pairs = []
    i, j = n, m
    while i or j:
        c = cost[i, j]
        if i and j and ref[i - 1] == hyp[j - 1] and cost[i - 1, j - 1] == c:
            op = "match"
        elif i and j and cost[i - 1, j - 1] + 1 == c:
            op = "sub"
        elif i and cost[i - 1, j] + 1 == c:
            op = "del"
        else:
            op = "ins"
        if op in ("match", "sub"):
            pairs.append((ref[i - 1], hyp[j - 1], op))
            i, j = i - 1, j - 1
        elif op == "del":
            pairs.append((ref[i - 1], None, op))
            i -= 1
        else:
            pairs.append((None, hyp[j - 1], op))
            j -= 1
    return AlignmentReport(pairs[::-1])


def error_rate(report: AlignmentReport) -> float:
    """``(S + D + I) / M``; may exceed 1."""
    if report.M == 0:
        raise UndefinedMetricError("error rate needs at least one reference token")
    return report.distance / report.M


def words(text: str) -> list[str]:
    return text.split()


def chars(text: str) -> list[str]:
    return [c for c in text if not c.isspace()]


def wer(ref: str, hyp: str) -> float:
    return error_rate(edit_align(words(ref), words(hyp)))


def cer(ref: str, hyp: str) -> float:
    return error_rate(edit_align(chars(ref), chars(hyp)))


# -- latency -----------------------------------------------------------------------


@dataclass
class LatencyReport:
    delays: list[float]  # d_NCA(w_i), ms
    al: float  # AL_NCA, ms
    r: float
    tau: int


def _segments_of(hypothesis) -> list[int]:
    return list(getattr(hypothesis, "segments", hypothesis))


def nca_latency(hypothesis, n: int, n_f: int, u: int | None = None, T_s: float = 40.0) -> LatencyReport:
    """Average lagging of emissions behind an ideal reader.

    ``d(w_i) = n(w_i) * n_f * T_s``, ``r = n * n_f / u``; ``tau`` is the first
    token emitted after the whole stream was read (``u`` if none) and
    ``AL = (1/tau) * sum_{i<=tau} [d(w_i) - r * (i-1) * T_s]``. ``u`` defaults
    to the number of emitted tokens.
    """
    segs = _segments_of(hypothesis)
    u = len(segs) if u is None else u
    if u <= 0 or not segs:
        raise UndefinedMetricError("latency is undefined without emitted tokens")
    delays = [float(s * n_f * T_s) for s in segs]
    r = n * n_f / u
    tau = next((i + 1 for i, s in enumerate(segs) if s >= n), u)
    tau = min(tau, len(segs))
    al = sum(delays[i] - r * i * T_s for i in range(tau)) / tau
    return LatencyReport(delays, al, r, tau)


# -- alignments --------------------------------------------------------------------


def extract_alignment(hypothesis, n: int) -> np.ndarray:
    """(u, n) 0/1 matrix with row ``i`` marking the segment that emitted token ``i``."""
    segs = _segments_of(hypothesis)
    out = np.zeros((len(segs), n), dtype=np.int64)
    for i, s in enumerate(segs):
        out[i, s - 1] = 1
    return out


def is_staircase(matrix: np.ndarray) -> bool:
    """One 1 per row, columns nondecreasing down the rows."""
    if matrix.size == 0:
        return True
    if np.any(matrix.sum(axis=1) != 1):
        return False
    cols = matrix.argmax(axis=1)
    return bool(np.all(np.diff(cols) >= 0))


def alignment_csv(matrix: np.ndarray) -> str:
    out = io.StringIO()
    np.savetxt(out, np.atleast_2d(matrix), fmt="%d", delimiter=",")
    return out.getvalue() if matrix.size else ""
