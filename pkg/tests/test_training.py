import io
import json

import numpy as np
import pytest

from streamlip.config import Config, DecoderConfig, EncoderConfig, MemoryConfig, StageConfig, TrainConfig, default_stages
from streamlip.data import Corpus, SegmentStream, SyntheticSpec, Utterance, generate
from streamlip.errors import DataError, FormatError, TrainingError
from streamlip.model import StreamingTransducer
from streamlip.training import (
    METRICS_HEADER,
    Curriculum,
    checksum,
    curriculum_order,
    length_batches,
    load_model,
    read_checkpoint,
    run_stage,
    train,
    write_checkpoint,
)
from streamlip.numerics import make_rng


def small_config(epochs=(1, 1, 1, 1), lr0=3e-3, seed=0):
    return Config(
        encoder=EncoderConfig(a=2, n_f=3, layers=2, d_hidden=16, heads=2, d_ff=32, d_in=8, max_positions=128),
        memory=MemoryConfig(k=4),
        decoder=DecoderConfig(vocab_size=5, lm_layers=1, heads=2),
        train=TrainConfig(lr0=lr0, shrink=0.999, batch_size=8, stages=default_stages(epochs, shallow=1, deep=2), seed=seed),
    )


def small_corpus(count=40, seed=0, noise=0.3):
    return generate(SyntheticSpec(vocab_size=4, u_range=(2, 4), d_in=8, count=count, seed=seed, noise_std=noise))


def _corpus_with_lengths(lengths):
    utts = [
        Utterance(f"u{i}", SegmentStream(np.zeros((n, 1, 2)), 1), np.array([1]), np.array([1]))
        for i, n in enumerate(lengths)
    ]
    return Corpus(2, 1, 40.0, utts)


def test_curriculum_linear_three_steps():
    corpus = _corpus_with_lengths([2, 4, 6] * 3)
    sched = Curriculum((1 / 3, 2 / 3, 1.0), epochs=3)
    sizes = [len(curriculum_order(corpus, sched, e)) for e in range(3)]
    assert sizes == [3, 6, 9]


def test_curriculum_first_epoch_and_beyond():
    corpus = _corpus_with_lengths([5, 2, 3, 2, 7, 4])
    sched = Curriculum((0.25, 0.5, 0.75, 1.0), epochs=8)
    assert curriculum_order(corpus, sched, 0) == ["u1", "u3"]
    assert len(curriculum_order(corpus, sched, 100)) == 6
    sizes = [len(curriculum_order(corpus, sched, e)) for e in range(10)]
    assert sizes == sorted(sizes) and sizes[-1] == 6


def test_curriculum_rejects_empty_corpus():
    with pytest.raises(DataError):
        curriculum_order(Corpus(2, 1, 40.0, []), Curriculum(), 0)


def test_length_batches_cover_everything_once():
    corpus = small_corpus(30)
    batches = length_batches(corpus.utterances, 8, make_rng(0, "shuffle"))
    ids = [u.uid for b in batches for u in b]
    assert sorted(ids) == sorted(u.uid for u in corpus)
    for b in batches:
        ns = [u.stream.n for u in b]
        assert max(ns) - min(ns) <= 2


def test_stage_learning_rate_sequence():
    cfg = small_config()
    model = StreamingTransducer(cfg)
    stage = StageConfig("warmup_shallow", 1, 1, "transducer")
    logs = run_stage(stage, model, small_corpus(24), make_rng(0, "shuffle"))
    lrs = logs[0].lrs
    assert lrs == [3e-3 * 0.999**j for j in range(len(lrs))]


def test_frozen_frontend_unchanged():
    model = StreamingTransducer(small_config())
    before = checksum(model.group("frontend"))
    others = checksum(model.encoder.layers[0].parameters())
    stage = StageConfig("warmup_deep", 2, 2, "transducer", ["frontend"])
    run_stage(stage, model, small_corpus(24), make_rng(0, "shuffle"))
    assert checksum(model.group("frontend")) == before
    assert checksum(model.encoder.layers[0].parameters()) != others
    assert all(p.requires_grad for p in model.parameters())


def test_zero_learning_rate_changes_nothing():
    cfg = small_config(lr0=0.0)
    corpus = small_corpus(20)
    model = StreamingTransducer(cfg)
    before = checksum(model.parameters())
    train(cfg, corpus, model=model)
    assert checksum(model.parameters()) == before


def test_nan_loss_aborts_with_stage_and_step():
    model = StreamingTransducer(small_config())
    model.ctc_head.weight.data[:] = np.nan
    stage = StageConfig("ctc_pretrain", 1, 1, "ctc")
    with pytest.raises(TrainingError) as info:
        run_stage(stage, model, small_corpus(16), make_rng(0, "shuffle"))
    assert info.value.stage == "ctc_pretrain" and info.value.step == 0


def test_training_is_deterministic(tmp_path):
    cfg = small_config()
    corpus = small_corpus(30)
    a = train(cfg, corpus, tmp_path / "a")
    b = train(cfg, corpus, tmp_path / "b")
    assert a.metrics_log() == b.metrics_log()
    assert a.metrics_log().startswith(METRICS_HEADER)
    for name in ("ctc_pretrain", "warmup_shallow", "warmup_deep", "full"):
        assert (tmp_path / "a" / f"{name}.slrc").read_bytes() == (tmp_path / "b" / f"{name}.slrc").read_bytes()
    assert (tmp_path / "a" / "metrics.tsv").read_text() == a.metrics_log()


def test_checkpoint_round_trip(tmp_path):
    model = StreamingTransducer(small_config())
    path = tmp_path / "m.slrc"
    write_checkpoint(path, model, default_stages()[1])
    meta, params = read_checkpoint(path)
    assert meta["stage"] == "warmup_shallow" and meta["encoder_layers"] == 2
    assert meta["config"] == json.loads(json.dumps(model.config.to_dict()))
    loaded, _ = load_model(path)
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data.astype(np.float32), p2.data)
    buf = io.BytesIO()
    write_checkpoint(buf, loaded, default_stages()[1])
    assert buf.getvalue() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(FormatError):
        read_checkpoint(io.BytesIO(b"XXXX"))
    model = StreamingTransducer(small_config())
    buf = io.BytesIO()
    write_checkpoint(buf, model)
    with pytest.raises(FormatError):
        read_checkpoint(io.BytesIO(buf.getvalue()[:-3]))


def test_ctc_training_loss_decreases_over_first_epochs():
    corpus = small_corpus(120, seed=1)
    ok = 0
    for seed in range(10):
        cfg = small_config(epochs=(5, 0, 0, 0), seed=seed)
        cfg.train.eval_every = 0
        losses = [h.loss for h in train(cfg, corpus).history]
        ok += all(b < a for a, b in zip(losses, losses[1:]))
    assert ok >= 9
