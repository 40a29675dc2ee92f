import math

import numpy as np
import pytest

from streamlip.config import MemoryConfig
from streamlip.errors import DimensionError, DomainError, StateError
from streamlip.memory import (
    BatchMemory,
    MemoryAction,
    MemoryState,
    MemoryTrace,
    Summarizer,
    decide,
    enhance,
    entropy,
    update,
)
from streamlip.numerics import Tensor, precision


@pytest.fixture(autouse=True)
def f64():
    with precision(64):
        yield


def _state(banks, counts=None, births=None, step=0):
    banks = np.asarray(banks, dtype=np.float64)
    k = banks.shape[0]
    st = MemoryState(Tensor(banks), np.zeros(k) if counts is None else np.array(counts, float),
                     np.zeros(k, np.int64) if births is None else np.array(births, np.int64), step, k)
    return st


def test_enhance_empty_memory_is_identity():
    h = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    out, alpha = enhance(h, MemoryState.empty(5, 4))
    assert out is h
    assert np.all(alpha.data == 0)


def test_enhance_single_bank():
    rng = np.random.default_rng(1)
    h = Tensor(rng.normal(size=(3, 4)))
    m = rng.normal(size=4)
    st = MemoryState.empty(3, 4)
    st.banks = Tensor(np.stack([m, np.zeros(4), np.zeros(4)]))
    st.occupancy = 1
    out, alpha = enhance(h, st)
    np.testing.assert_allclose(alpha.data, [1, 0, 0])
    np.testing.assert_allclose(out.data, h.data + m, atol=1e-12)


def test_enhance_equal_scores_average_banks():
    h = Tensor(np.array([[1.0, 0.0], [1.0, 0.0]]))
    st = _state([[0.0, 1.0], [0.0, -1.0]])  # both orthogonal to the query
    out, alpha = enhance(h, st)
    np.testing.assert_allclose(alpha.data, [0.5, 0.5])
    np.testing.assert_allclose(out.data, h.data + 0.0, atol=1e-12)


def test_enhance_dimension_mismatch():
    with pytest.raises(DimensionError):
        enhance(Tensor(np.zeros((3, 4))), MemoryState.empty(2, 5))


def test_enhance_is_read_only():
    rng = np.random.default_rng(2)
    st = _state(rng.normal(size=(3, 4)), counts=[1, 2, 3])
    before = (st.banks.data.copy(), st.counts.copy(), st.birth_step.copy(), st.current_step, st.occupancy)
    for _ in range(3):
        enhance(Tensor(rng.normal(size=(3, 4))), st)
    assert np.array_equal(st.banks.data, before[0]) and np.array_equal(st.counts, before[1])
    assert np.array_equal(st.birth_step, before[2]) and (st.current_step, st.occupancy) == before[3:]


@pytest.mark.parametrize("p, bits", [([0.25] * 4, 2.0), ([1, 0, 0, 0], 0.0), ([0.5, 0.5, 0, 0], 1.0)])
def test_entropy_examples(p, bits):
    assert entropy(np.array(p)) == pytest.approx(bits, abs=1e-12)


def test_entropy_rejects_negative():
    with pytest.raises(DomainError):
        entropy(np.array([1.2, -0.2]))


def test_momentum_merge_example():
    cfg = MemoryConfig(k=2, gamma_m=0.7, gamma_e=0.5)
    st = _state([[1.0, 0.0], [5.0, 5.0]], counts=[1, 1], births=[0, 1], step=2)
    alpha = np.array([0.99, 0.01])  # entropy 0.08 bits < 0.5
    h = Tensor(np.array([[0.0, 1.0]] * 3))
    new = update(st, h, alpha, cfg)
    np.testing.assert_allclose(new.banks.data[0], [0.7, 0.3], atol=1e-15)
    np.testing.assert_array_equal(new.banks.data[1], [5.0, 5.0])
    assert new.occupancy == 2


def test_lfu_eviction_example():
    # counts (2.0, 0.6) and lives (4, 2) after this read give LFU indices (0.5, 0.3)
    cfg = MemoryConfig(k=2, strategy="lfu")
    st = _state([[1.0, 0.0], [0.0, 1.0]], counts=[1.5, 0.1], births=[0, 2], step=3)
    counts, action = decide(st, np.array([0.5, 0.5]), cfg)
    np.testing.assert_allclose(counts, [2.0, 0.6])
    np.testing.assert_allclose(counts / st.life(), [0.5, 0.3])
    assert action.kind == "evict" and action.slot == 1
    new = update(st, Tensor(np.array([[3.0, 3.0]])), np.array([0.5, 0.5]), cfg)
    np.testing.assert_allclose(new.banks.data[1], [3.0, 3.0])
    assert new.counts[1] == 1.0 and new.birth_step[1] == 3 and new.current_step == 4


def test_fill_phase_appends():
    cfg = MemoryConfig(k=3)
    st = MemoryState.empty(3, 2)
    for i in range(3):
        h = Tensor(np.full((2, 2), float(i)))
        _, alpha = enhance(h, st)
        st = update(st, h, alpha, cfg)
        assert st.occupancy == i + 1
    np.testing.assert_allclose(st.banks.data, [[0, 0], [1, 1], [2, 2]])


def test_fill_phase_gating_flag():
    cfg = MemoryConfig(k=4, gate_during_fill=True)
    st = MemoryState.empty(4, 2)
    for _ in range(5):
        h = Tensor(np.ones((2, 2)))
        _, alpha = enhance(h, st)
        st = update(st, h, alpha, cfg)
    # a single bank always has zero entropy, so every later write merges
    assert st.occupancy == 1


def test_update_rejects_wrong_alpha_length():
    st = MemoryState.empty(3, 2)
    with pytest.raises(StateError):
        update(st, Tensor(np.zeros((2, 2))), np.zeros(4), MemoryConfig(k=3))


def _random_run(strategy, steps, seed, k=5, d=3):
    cfg = MemoryConfig(k=k, strategy=strategy)
    rng = np.random.default_rng(seed)
    st = MemoryState.empty(k, d)
    records = []
    for t in range(steps):
        # occasionally repeat a stored bank so low-entropy reads happen
        if st.occupancy and rng.random() < 0.3:
            h = Tensor(np.repeat(st.banks.data[rng.integers(st.occupancy)][None] * 6, 2, axis=0))
        else:
            h = Tensor(rng.normal(size=(2, d)) * rng.uniform(0.1, 3))
        _, alpha = enhance(h, st)
        counts, action = decide(st, alpha.data, cfg)
        new = update(st, h, alpha, cfg)
        records.append((st, alpha.data.copy(), counts, action, new, h))
        st = new
    return cfg, records


@pytest.mark.parametrize("strategy", ["fifo", "lfu", "lfu_momentum"])
def test_randomised_invariants(strategy):
    cfg, records = _random_run(strategy, 300, seed=3)
    for t, (st, alpha, counts, action, new, h) in enumerate(records):
        assert new.occupancy <= cfg.k
        assert new.occupancy == min(t + 1, cfg.k) or action.kind == "merge"
        if st.occupancy:
            assert alpha.sum() == pytest.approx(1.0, abs=1e-6)
            assert -1e-12 <= action.entropy <= math.log2(st.occupancy) + 1e-9
        assert np.all(new.life()[new.occupied()] >= 1)
        if action.kind == "merge":
            j = action.slot
            expect = 0.7 * st.banks.data[j] + 0.3 * h.data.mean(axis=0)
            np.testing.assert_allclose(new.banks.data[j], expect, rtol=0, atol=1e-12)
            others = np.arange(cfg.k) != j
            np.testing.assert_array_equal(new.banks.data[others], st.banks.data[others])
        if action.kind == "evict" and strategy != "fifo":
            assert action.slot == int(np.argmin(counts / st.life()))


def test_fifo_evicts_in_insertion_order():
    cfg, records = _random_run("fifo", 40, seed=4, k=4)
    evicted = [a.slot for _, _, _, a, _, _ in records if a.kind == "evict"]
    assert evicted == [i % 4 for i in range(len(evicted))]


def test_momentum_keeps_occupancy_at_k():
    cfg, records = _random_run("lfu_momentum", 200, seed=5)
    kinds = {r[3].kind for r in records}
    assert "merge" in kinds and "evict" in kinds
    assert records[-1][4].occupancy == cfg.k


@pytest.mark.parametrize("how", ["avgpool", "maxpool", "conv"])
def test_batch_memory_matches_single_stream(how):
    rng = np.random.default_rng(6)
    cfg = MemoryConfig(k=3, summarize=how)
    summ = Summarizer(how, 2, 4)
    if how == "conv":
        summ.weight.data[:] = rng.normal(size=(2, 4))
    batch = BatchMemory(2, 4, cfg, summ, np.float64)
    singles = [MemoryState.empty(3, 4) for _ in range(2)]
    xs = rng.normal(size=(7, 2, 2, 4))
    mask = np.ones((2, 2), bool)
    mask[1, 1] = False
    for t in range(7):
        active = np.array([True, t < 5])
        out = batch.step(Tensor(xs[t]), mask, active)
        for b in range(2):
            if not active[b]:
                continue
            h = Tensor(xs[t, b])
            ref, alpha = enhance(h, singles[b], summ, mask[b])
            singles[b] = update(singles[b], h, alpha, cfg, summ, mask[b])
            np.testing.assert_allclose(out.data[b], ref.data, atol=1e-12)
    for b in range(2):
        np.testing.assert_allclose(batch.banks.data[b], singles[b].banks.data, atol=1e-12)
        np.testing.assert_allclose(batch.states[b].counts, singles[b].counts, atol=1e-12)


def test_summarizer_ignores_padding():
    h = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [100.0, -100.0]]))
    mask = np.array([True, True, False])
    np.testing.assert_allclose(Summarizer("avgpool", 3, 2)(h, mask).data, [2.0, 3.0])
    np.testing.assert_allclose(Summarizer("maxpool", 3, 2)(h, mask).data, [3.0, 4.0])


def test_memory_gradients_flow_through_banks():
    cfg = MemoryConfig(k=2)
    x = Tensor(np.random.default_rng(7).normal(size=(3, 2, 4)), requires_grad=True)
    st = MemoryState.empty(2, 4)
    total = None
    for t in range(3):
        h = x[t]
        out, alpha = enhance(h, st)
        st = update(st, h, alpha, cfg)
        total = out.sum() if total is None else total + out.sum()
    total.backward()
    assert np.abs(x.grad[0]).sum() > 0


def test_trace_csv():
    trace = MemoryTrace()
    cfg = MemoryConfig(k=2)
    st = MemoryState.empty(2, 2)
    for i in range(3):
        h = Tensor(np.full((1, 2), float(i + 1)))
        _, alpha = enhance(h, st)
        st = update(st, h, alpha, cfg, trace=trace)
    lines = trace.to_csv().strip().split("\n")
    assert lines[0] == "step,entropy_bits,action,alpha_0,alpha_1"
    assert lines[1].startswith("0,0.000000,append")
    assert len(lines) == 4
    assert str(MemoryAction("evict", 1, 0.0)) == "evict(1)"
