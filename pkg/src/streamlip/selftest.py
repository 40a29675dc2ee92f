"""Oracle suites run by ``streamlip selftest`` and reused by the acceptance tests.

Each suite returns a :class:`SuiteResult`; ``details`` names the first few
failing cases. Everything is seeded, so the report text is reproducible.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .config import Config, DecoderConfig, EncoderConfig, MemoryConfig, TrainConfig
from .data import SyntheticSpec, generate
from .decoder import ctc_loss, transducer_loss
from .memory import MemoryState, Summarizer, enhance, entropy, update
from .model import StreamingTransducer, make_batch
from .numerics import Tensor, grad_check, log_softmax, make_rng, precision


@dataclass
class SuiteResult:
    name: str
    cases: int
    failures: int = 0
    worst: float = 0.0
    details: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def fail(self, what: str) -> None:
        self.failures += 1
        if len(self.details) < 5:
            self.details.append(what)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}\t{self.name}\tcases={self.cases}\tfailures={self.failures}\tworst={self.worst:.3e}"


def _log_dist(rng, shape):
    x = rng.normal(size=shape) * 1.5
    return x - np.logaddexp.reduce(x, axis=-1, keepdims=True)


# -- brute-force references -----------------------------------------------------------


def enumerate_transducer(lattice: np.ndarray, targets, terminal_blank: bool = True) -> float:
    """-log of the summed probability of every monotone lattice path."""
    rows = lattice.shape[0]
    n = rows if terminal_blank else rows - 1
    u = len(targets)
    steps = (n - 1 if terminal_blank else n) + u
    total = -math.inf
    for emits in itertools.combinations(range(steps), u):
        t = i = 0
        logp = 0.0
        for s in range(steps):
            if s in emits:
                logp += lattice[t, i, targets[i]]
                i += 1
            else:
                logp += lattice[t, i, 0]
                t += 1
        if terminal_blank:
            logp += lattice[t, i, 0]
        total = np.logaddexp(total, logp)
    return -float(total)


def enumerate_ctc(log_probs: np.ndarray, target) -> float:
    T, V = log_probs.shape
    total = -math.inf
    target = list(target)
    for path in itertools.product(range(V), repeat=T):
        out = [c for k, c in enumerate(path) if c != 0 and (k == 0 or c != path[k - 1])]
        if out == target:
            total = np.logaddexp(total, sum(log_probs[t, c] for t, c in enumerate(path)))
    return -float(total)


# -- suites ---------------------------------------------------------------------------


def transducer_suite(cases: int = 200, tol: float = 1e-6, seed: int = 0) -> SuiteResult:
    res = SuiteResult("transducer_enumeration", cases)
    rng = make_rng(seed, "selftest", 1)
    with precision(64):
        for c in range(cases):
            n = int(rng.integers(1, 5))
            u = int(rng.integers(0, 4))
            V = int(rng.integers(2, 6))
            terminal = bool(c % 4 != 3)
            rows = n if terminal else n + 1
            lat = _log_dist(rng, (rows, u + 1, V))
            tgt = rng.integers(1, V, size=u).tolist()
            got = float(transducer_loss(Tensor(lat), tgt, terminal_blank=terminal).data)
            err = abs(got - enumerate_transducer(lat, tgt, terminal))
            res.worst = max(res.worst, err)
            if not err <= tol:
                res.fail(f"n={n} u={u} V={V} terminal={terminal} err={err:.2e}")
    return res


def ctc_suite(cases: int = 200, tol: float = 1e-6, seed: int = 0) -> SuiteResult:
    res = SuiteResult("ctc_enumeration", cases)
    rng = make_rng(seed, "selftest", 2)
    with precision(64):
        done = 0
        while done < cases:
            T = int(rng.integers(1, 7))
            V = int(rng.integers(2, 5))
            u = int(rng.integers(0, 4))
            tgt = rng.integers(1, V, size=u).tolist()
            repeats = sum(a == b for a, b in zip(tgt, tgt[1:]))
            if u + repeats > T:
                continue
            lp = _log_dist(rng, (T, V))
            err = abs(float(ctc_loss(Tensor(lp), tgt).data) - enumerate_ctc(lp, tgt))
            res.worst = max(res.worst, err)
            if not err <= tol:
                res.fail(f"T={T} V={V} target={tgt} err={err:.2e}")
            done += 1
    return res


def toy_config(seed: int = 3) -> Config:
    return Config(
        encoder=EncoderConfig(a=2, n_f=2, layers=2, d_hidden=8, heads=2, d_ff=12, d_in=4, max_positions=64),
        memory=MemoryConfig(k=2),
        decoder=DecoderConfig(vocab_size=4, lm_layers=1, heads=2),
        train=TrainConfig(seed=seed),
    )


def gradient_suite(tol: float = 1e-5, seed: int = 0) -> SuiteResult:
    res = SuiteResult("gradient_checks", 4)
    rng = make_rng(seed, "selftest", 3)
    with precision(64):
        lat = Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True)
        checks = [
            ("transducer_loss", lambda: transducer_loss(log_softmax(lat), [1, 3]), [lat]),
        ]
        lp = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        checks.append(("ctc_loss", lambda: ctc_loss(log_softmax(lp), [2, 2, 1]), [lp]))
        model = StreamingTransducer(toy_config())
        spec = SyntheticSpec(vocab_size=3, u_range=(1, 3), frames_per_token_range=(1, 3), d_in=4, n_f=2, count=2, seed=2)
        batch = make_batch(generate(spec).utterances)
        checks.append(("toy_model_transducer", lambda: model.transducer_losses(batch).sum(), model.parameters()))
        ctc_params = model.encoder.parameters() + model.ctc_head.parameters()
        checks.append(("toy_model_ctc", lambda: model.ctc_losses(batch, 1).sum(), ctc_params))
        for name, f, params in checks:
            err = grad_check(f, params, max_coords=4, seed=1)
            res.worst = max(res.worst, err)
            if not err < tol:
                res.fail(f"{name} rel err {err:.2e}")
    return res


def _random_segment(rng, n_f: int, d: int, pool: np.ndarray | None = None) -> Tensor:
    if pool is not None and rng.random() < 0.6:
        base = pool[rng.integers(len(pool))]
        return Tensor(base + 0.01 * rng.normal(size=(n_f, d)))
    return Tensor(rng.normal(size=(n_f, d)) * rng.uniform(0.1, 3.0))


def memory_suite(steps: int = 1000, seed: int = 0) -> list[SuiteResult]:
    """Five properties, each checked on ``steps`` randomized memory updates."""
    rng = make_rng(seed, "selftest", 4)
    occ = SuiteResult("memory_occupancy_bound", steps)
    ent = SuiteResult("memory_entropy_range", steps)
    merge = SuiteResult("memory_momentum_merge", steps)
    lfu = SuiteResult("memory_lfu_eviction", steps)
    fifo = SuiteResult("memory_fifo_order", steps)
    n_f, d = 2, 4
    summ = Summarizer("avgpool", n_f, d)
    with precision(64):
        # occupancy and entropy along random streams of every strategy
        done = 0
        while done < steps:
            k = int(rng.integers(1, 6))
            cfg = MemoryConfig(k=k, strategy=("fifo", "lfu", "lfu_momentum")[done % 3])
            pool = rng.normal(size=(3, n_f, d))
            state = MemoryState.empty(k, d)
            for t in range(int(rng.integers(1, 15))):
                h = _random_segment(rng, n_f, d, pool)
                _, alpha = enhance(h, state, summ)
                if state.occupancy:
                    e = entropy(alpha)
                    ent.worst = max(ent.worst, e - math.log2(state.occupancy))
                    if not -1e-12 <= e <= math.log2(state.occupancy) + 1e-12:
                        ent.fail(f"entropy {e} with occupancy {state.occupancy}")
                state = update(state, h, alpha, cfg, summ)
                if not state.occupancy <= k or state.occupancy != min(t + 1, k):
                    occ.fail(f"occupancy {state.occupancy} after {t + 1} updates, k={k}")
                done += 1
                if done >= steps:
                    break
        # a forced merge is exactly gamma * m + (1 - gamma) * summary
        for c in range(steps):
            k = int(rng.integers(2, 6))
            cfg = MemoryConfig(k=k, gamma_e=1e9)
            state = MemoryState.empty(k, d)
            for _ in range(k):
                h = _random_segment(rng, n_f, d)
                state = update(state, h, enhance(h, state, summ)[1], cfg, summ)
            h = _random_segment(rng, n_f, d)
            _, alpha = enhance(h, state, summ)
            before = state.banks.data.copy()
            after = update(state, h, alpha, cfg, summ).banks.data
            slot = int(np.argmax(alpha.data))
            s = h.data.mean(axis=0)
            expect = before.copy()
            expect[slot] = 0.7 * before[slot] + 0.3 * s
            err = float(np.abs(after - expect).max())
            merge.worst = max(merge.worst, err)
            if err > 1e-12:
                merge.fail(f"case {c}: merge error {err:.2e}")
        # full memory under lfu evicts argmin (count + alpha) / life
        for c in range(steps):
            k = int(rng.integers(2, 6))
            cfg = MemoryConfig(k=k, strategy="lfu")
            state = MemoryState.empty(k, d)
            for _ in range(k + int(rng.integers(0, 6))):
                h = _random_segment(rng, n_f, d)
                state = update(state, h, enhance(h, state, summ)[1], cfg, summ)
            h = _random_segment(rng, n_f, d)
            _, alpha = enhance(h, state, summ)
            counts = state.counts + alpha.data
            life = np.array([state.current_step - b + 1 for b in state.birth_step])
            want = min(range(k), key=lambda i: (counts[i] / life[i], i))
            new = update(state, h, alpha, cfg, summ)
            changed = [i for i in range(k) if not np.array_equal(new.banks.data[i], state.banks.data[i])]
            if changed != [want] or new.birth_step[want] != state.current_step:
                lfu.fail(f"case {c}: expected eviction of {want}, banks changed {changed}")
        # fifo evicts the oldest bank, cycling through slots in insertion order
        done = 0
        while done < steps:
            k = int(rng.integers(1, 6))
            cfg = MemoryConfig(k=k, strategy="fifo")
            state = MemoryState.empty(k, d)
            inserted = []
            for t in range(int(rng.integers(k + 1, 3 * k + 3))):
                h = _random_segment(rng, n_f, d)
                old = state.birth_step.copy()
                new = update(state, h, enhance(h, state, summ)[1], cfg, summ)
                slot = int(np.flatnonzero(new.birth_step == state.current_step)[0]) if t else 0
                if t >= k:
                    oldest = inserted.pop(0)
                    if slot != oldest or old[slot] != min(old):
                        fifo.fail(f"step {t}: evicted {slot}, oldest was {oldest}")
                    done += 1
                inserted.append(slot)
                state = new
                if done >= steps:
                    break
    return [occ, ent, merge, lfu, fifo]


def run_all(seed: int = 0, lattice_cases: int = 200, ctc_cases: int = 200, memory_steps: int = 1000) -> list[SuiteResult]:
    return [
        transducer_suite(lattice_cases, seed=seed),
        ctc_suite(ctc_cases, seed=seed),
        gradient_suite(seed=seed),
        *memory_suite(memory_steps, seed=seed),
    ]


def report(results: list[SuiteResult]) -> str:
    lines = []
    for r in results:
        lines.append(r.line())
        lines += [f"\t{d}" for d in r.details]
    return "\n".join(lines) + "\n"
