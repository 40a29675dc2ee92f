"""Decode a corpus and score it: decode records, per-utterance rates, latency summary.

Text formats (tab-separated, one header line)::

    decode records   uid  tokens  segments  logprob
    eval report      uid  ref_len  errors  rate  al_nca_ms
                     ...
                     TOTAL  <ref tokens>  <errors>  <micro rate>  <mean AL>

``tokens`` and ``segments`` are space-separated integers. An utterance with
no emitted tokens has an empty field and ``nan`` latency, which the summary
skips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Corpus
from .decoder import Hypothesis
from .errors import FormatError
from .metrics import edit_align, nca_latency

DECODE_HEADER = "uid\ttokens\tsegments\tlogprob"
EVAL_HEADER = "uid\tref_len\terrors\trate\tal_nca_ms"


@dataclass
class UtteranceScore:
    uid: str
    ref_len: int
    errors: int
    al: float  # nan when nothing was emitted

    @property
    def rate(self) -> float:
        return self.errors / self.ref_len if self.ref_len else math.nan


@dataclass
class CorpusScore:
    utterances: list[UtteranceScore]

    @property
    def errors(self) -> int:
        return sum(u.errors for u in self.utterances)

    @property
    def ref_tokens(self) -> int:
        return sum(u.ref_len for u in self.utterances)

    @property
    def rate(self) -> float:
        """Micro-averaged error rate: total errors over total reference tokens."""
        return self.errors / self.ref_tokens if self.ref_tokens else math.nan

    @property
    def al(self) -> float:
        vals = [u.al for u in self.utterances if not math.isnan(u.al)]
        return float(np.mean(vals)) if vals else math.nan


def decode_corpus(model, corpus: Corpus, num_layers: int | None = None) -> dict[str, Hypothesis]:
    return {utt.uid: model.decode(utt.stream, num_layers) for utt in corpus}


def score(corpus: Corpus, hyps: dict[str, Hypothesis]) -> CorpusScore:
    out = []
    for utt in corpus:
        hyp = hyps[utt.uid]
        rep = edit_align(list(utt.tokens), hyp.tokens)
        al = nca_latency(hyp, utt.stream.n, utt.stream.n_f, T_s=utt.stream.T_s).al if hyp.tokens else math.nan
        out.append(UtteranceScore(utt.uid, utt.u, rep.distance, al))
    return CorpusScore(out)


def evaluate(model, corpus: Corpus, num_layers: int | None = None) -> CorpusScore:
    return score(corpus, decode_corpus(model, corpus, num_layers))


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def format_eval_report(result: CorpusScore) -> str:
    lines = [EVAL_HEADER]
    for u in result.utterances:
        lines.append(f"{u.uid}\t{u.ref_len}\t{u.errors}\t{_fmt(u.rate)}\t{_fmt(u.al)}")
    lines.append(f"TOTAL\t{result.ref_tokens}\t{result.errors}\t{_fmt(result.rate)}\t{_fmt(result.al)}")
    return "\n".join(lines) + "\n"


def format_decode_records(hyps: dict[str, Hypothesis]) -> str:
    lines = [DECODE_HEADER]
    for uid, h in hyps.items():
        toks = " ".join(map(str, h.tokens))
        segs = " ".join(map(str, h.segments))
        lines.append(f"{uid}\t{toks}\t{segs}\t{h.logprob:.6f}")
    return "\n".join(lines) + "\n"


def read_decode_records(path_or_text) -> dict[str, Hypothesis]:
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) else str(path_or_text)
    lines = text.rstrip("\n").split("\n")
    if not lines or lines[0] != DECODE_HEADER:
        raise FormatError("decode records must start with the header line " + repr(DECODE_HEADER))
    out = {}
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"line {k}: expected 4 tab-separated fields")
        uid, toks, segs, logprob = parts
        try:
            tokens = [int(x) for x in toks.split()]
            segments = [int(x) for x in segs.split()]
            out[uid] = Hypothesis(tokens, segments, float(logprob))
        except ValueError as exc:
            raise FormatError(f"line {k}: {exc}") from exc
        if len(tokens) != len(segments):
            raise FormatError(f"line {k}: {len(tokens)} tokens but {len(segments)} emission segments")
    return out
