import numpy as np
import pytest

from streamlip.config import Config, DecoderConfig, EncoderConfig, MemoryConfig, TrainConfig
from streamlip.data import SyntheticSpec, generate
from streamlip.decoder import lm_encode
from streamlip.memory import MemoryState, average_frames, enhance, update
from streamlip.model import StreamingTransducer, make_batch
from streamlip.numerics import grad_check, no_grad, precision


def tiny_config(k=2, strategy="lfu_momentum", terminal=True, summarize="avgpool"):
    return Config(
        encoder=EncoderConfig(a=2, n_f=2, layers=2, d_hidden=8, heads=2, d_ff=12, d_in=4, max_positions=64),
        memory=MemoryConfig(k=k, strategy=strategy, summarize=summarize),
        decoder=DecoderConfig(vocab_size=4, lm_layers=1, heads=2, terminal_blank=terminal),
        train=TrainConfig(seed=3),
    )


def tiny_corpus(count=4, seed=0):
    return generate(SyntheticSpec(vocab_size=3, u_range=(1, 3), frames_per_token_range=(1, 3), d_in=4, n_f=2, count=count, seed=seed))


@pytest.fixture(autouse=True)
def f64():
    with precision(64):
        yield


@pytest.mark.parametrize("k, strategy", [(2, "lfu_momentum"), (2, "fifo"), (10, "lfu")])
def test_batched_lattice_matches_streaming_path(k, strategy):
    model = StreamingTransducer(tiny_config(k, strategy))
    corpus = tiny_corpus(3)
    batch = make_batch(corpus.utterances)
    with no_grad():
        lat = model.lattice(batch).data
        for j, utt in enumerate(corpus):
            s = utt.stream
            inc = model.encoder.start_stream()
            state = MemoryState.empty(k, 8)
            lm_rows = lm_encode(utt.tokens, model.lm)
            masks = s.frame_mask()
            for t in range(s.n):
                h = inc.push(s.segments[t], s.pad if t == s.n - 1 else 0)
                h_tilde, alpha = enhance(h, state, model.memory, masks[t])
                state = update(state, h, alpha, model.config.memory, model.memory, masks[t])
                v = average_frames(h_tilde, masks[t])
                for i in range(utt.u + 1):
                    ref = model.joint(v, lm_rows[i]).data
                    np.testing.assert_allclose(lat[j, t, i], ref, atol=1e-10)


def test_full_model_gradient_check():
    model = StreamingTransducer(tiny_config(k=2))
    batch = make_batch(tiny_corpus(1, seed=2).utterances)
    err = grad_check(lambda: model.transducer_losses(batch).sum(), model.parameters(), max_coords=4, seed=1)
    assert err < 1e-5


def test_ctc_head_gradient_check():
    model = StreamingTransducer(tiny_config())
    batch = make_batch(tiny_corpus(2, seed=4).utterances)
    params = model.encoder.parameters() + model.ctc_head.parameters()
    assert grad_check(lambda: model.ctc_losses(batch, 1).sum(), params, max_coords=4) < 1e-5


def test_conv_summarizer_is_trained_through_memory():
    model = StreamingTransducer(tiny_config(k=2, summarize="conv"))
    batch = make_batch(tiny_corpus(2, seed=5).utterances)
    model.transducer_losses(batch).sum().backward()
    assert model.memory.weight.grad is not None and np.abs(model.memory.weight.grad).sum() > 0


def test_no_terminal_blank_convention():
    model = StreamingTransducer(tiny_config(terminal=False))
    batch = make_batch(tiny_corpus(2).utterances)
    lat = model.lattice(batch)
    assert lat.shape[1] == batch.feats.shape[1] + 1
    assert np.all(np.isfinite(model.transducer_losses(batch).data))


def test_decode_monotone_and_deterministic():
    model = StreamingTransducer(tiny_config())
    for utt in tiny_corpus(5):
        a = model.decode(utt.stream)
        b = model.decode(utt.stream)
        assert a == b
        assert a.consumed == utt.stream.n
        assert all(x <= y for x, y in zip(a.segments, a.segments[1:]))


def test_same_seed_same_parameters():
    a = StreamingTransducer(tiny_config())
    b = StreamingTransducer(tiny_config())
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_parameter_groups():
    model = StreamingTransducer(tiny_config())
    names = {n for n, _ in model.named_parameters()}
    assert any(n.startswith("encoder.frontend.") for n in names)
    assert len(model.group("frontend")) == 2
    with pytest.raises(Exception):
        model.group("nope")
