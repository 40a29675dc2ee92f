"""Command line: gen, train, eval, decode, latency, selftest.

Exit codes: 0 on success, 1 when selftest finds a failure or training
diverges, 2 on usage errors, missing files and malformed inputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import Config, default_stages, desk_config
from .data import Corpus, SyntheticSpec, generate, read_corpus, write_corpus
from .errors import StreamlipError, TrainingError
from .evaluation import decode_corpus, format_decode_records, format_eval_report, read_decode_records, score
from .metrics import alignment_csv, extract_alignment, nca_latency
from .training import load_model, train

LATENCY_HEADER = "uid\tu\tn\ttau\tr\tal_nca_ms\tdelays_ms"


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _int_pair(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(",")
    return int(lo), int(hi or lo)


def _write(out: str | None, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _overrides(args) -> dict:
    enc, mem = {}, {}
    if args.nf is not None:
        enc["n_f"] = args.nf
    if args.window is not None:
        enc["a"] = args.window
    if args.memory_strategy is not None:
        mem["strategy"] = args.memory_strategy
    if args.memory_size is not None:
        mem["k"] = args.memory_size
    if args.summarize is not None:
        mem["summarize"] = args.summarize
    return {"encoder": enc, "memory": mem}


def _build_config(args, corpus: Corpus) -> Config:
    if args.config:
        cfg = Config.load(_existing(args.config))
    else:
        vocab = max(int(t) for u in corpus for t in u.tokens) + 1
        cfg = desk_config(vocab_size=vocab, d_in=corpus.d_in, n_f=corpus.n_f)
    cfg = cfg.with_overrides(**_overrides(args))
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.stages = default_stages(tuple(args.epochs), cfg.train.stages[0].encoder_layers, cfg.train.stages[-1].encoder_layers)
    if cfg.encoder.n_f != corpus.n_f or cfg.encoder.d_in != corpus.d_in:
        raise UsageError(
            f"config expects n_f={cfg.encoder.n_f}, d_in={cfg.encoder.d_in}; corpus has n_f={corpus.n_f}, d_in={corpus.d_in}"
        )
    return cfg


def _load_checkpoint(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    model, meta = load_model(_existing(args.checkpoint))
    return model, meta.get("encoder_layers")


def _corpus(args) -> Corpus:
    return read_corpus(_existing(args.corpus))


# -- subcommands -----------------------------------------------------------------------


def cmd_gen(args) -> int:
    if not args.out:
        raise UsageError("gen needs --out PATH")
    spec = SyntheticSpec(
        vocab_size=args.vocab_size,
        u_range=args.tokens,
        frames_per_token_range=args.frames_per_token,
        d_in=args.d_in,
        noise_std=args.noise_std,
        n_f=args.nf or 3,
        count=args.count,
        seed=args.seed or 0,
        max_frames=args.max_frames,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_corpus(generate(spec), args.out)
    return 0


def cmd_train(args) -> int:
    if not args.out:
        raise UsageError("train needs --out DIR")
    corpus = _corpus(args)
    cfg = _build_config(args, corpus)
    result = train(cfg, corpus, args.out)
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"final stage {last.stage}: loss {last.loss:.4f} dev rate {last.wer:.4f} AL {last.al:.1f} ms")
    return 0


def cmd_eval(args) -> int:
    corpus = _corpus(args)
    model, layers = _load_checkpoint(args)
    hyps = decode_corpus(model, corpus, layers)
    _write(args.out, format_eval_report(score(corpus, hyps)))
    return 0


def cmd_decode(args) -> int:
    if not args.out:
        raise UsageError("decode needs --out DIR")
    corpus = _corpus(args)
    model, layers = _load_checkpoint(args)
    hyps = decode_corpus(model, corpus, layers)
    out = Path(args.out)
    (out / "alignments").mkdir(parents=True, exist_ok=True)
    (out / "decode.tsv").write_text(format_decode_records(hyps))
    for utt in corpus:
        (out / "alignments" / f"{utt.uid}.csv").write_text(alignment_csv(extract_alignment(hyps[utt.uid], utt.stream.n)))
    return 0


def cmd_latency(args) -> int:
    corpus = _corpus(args)
    hyps = read_decode_records(_existing(args.records))
    by_id = corpus.by_id()
    lines = [LATENCY_HEADER]
    for uid, hyp in hyps.items():
        if uid not in by_id:
            raise UsageError(f"decode record {uid} is not in the corpus")
        s = by_id[uid].stream
        if not hyp.tokens:
            lines.append(f"{uid}\t0\t{s.n}\t0\tnan\tnan\t")
            continue
        rep = nca_latency(hyp, s.n, s.n_f, T_s=s.T_s)
        delays = " ".join(f"{d:.1f}" for d in rep.delays)
        lines.append(f"{uid}\t{len(hyp.tokens)}\t{s.n}\t{rep.tau}\t{rep.r:.6f}\t{rep.al:.6f}\t{delays}")
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import report, run_all

    results = run_all(seed=args.seed or 0)
    text = report(results)
    sys.stdout.write(text)
    if args.out:
        _write(args.out, text)
    return 0 if all(r.passed for r in results) else 1


# -- parser ----------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path (file or directory, per subcommand)")
    p.add_argument("--checkpoint", help="SLRC checkpoint")
    p.add_argument("--memory-strategy", choices=("fifo", "lfu", "lfu_momentum"))
    p.add_argument("--memory-size", type=int, metavar="K")
    p.add_argument("--summarize", choices=("conv", "maxpool", "avgpool"))
    p.add_argument("--nf", type=int, metavar="N", help="frames per segment")
    p.add_argument("--window", type=int, metavar="A", help="attention window in segments")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamlip", description="Streaming lip-reading transducer toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic SLRF corpus")
    _common(p)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--vocab-size", type=int, default=8)
    p.add_argument("--tokens", type=_int_pair, default=(2, 5), metavar="LO,HI")
    p.add_argument("--frames-per-token", type=_int_pair, default=(2, 4), metavar="LO,HI")
    p.add_argument("--d-in", type=int, default=16)
    p.add_argument("--noise-std", type=float, default=0.3)
    p.add_argument("--max-frames", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="run the staged training plan")
    _common(p)
    p.add_argument("corpus")
    p.add_argument("--epochs", type=lambda s: [int(x) for x in s.split(",")], metavar="E1,E2,E3,E4")
    p.set_defaults(func=cmd_train)

    for name, func, what in (("eval", cmd_eval, "score a checkpoint on a corpus"), ("decode", cmd_decode, "write decode records and alignments")):
        p = sub.add_parser(name, help=what)
        _common(p)
        p.add_argument("corpus")
        p.set_defaults(func=func)

    p = sub.add_parser("latency", help="recompute latency from decode records")
    _common(p)
    p.add_argument("records", help="decode.tsv written by decode")
    p.add_argument("corpus", help="the corpus that was decoded (for n and n_f)")
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("selftest", help="run the oracle suites")
    _common(p)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "epochs", None) is not None and len(args.epochs) != 4:
        parser.error("--epochs needs four comma-separated counts")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"streamlip: error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"streamlip: training failed: {exc}", file=sys.stderr)
        return 1
    except (StreamlipError, ValueError) as exc:
        print(f"streamlip: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
