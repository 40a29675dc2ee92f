import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamlip.errors import DimensionError, NumericError
from streamlip.numerics import (
    Adam,
    Tensor,
    concatenate,
    conv3d,
    embedding,
    grad_check,
    layer_norm,
    linear,
    log_softmax,
    logsumexp,
    make_rng,
    masked_softmax,
    matmul,
    max_pool3d,
    no_grad,
    precision,
    scaled_dot_attention,
    softmax,
    stack,
    take_along_axis,
    where,
)


@pytest.fixture
def f64():
    with precision(64):
        yield


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


# -- matmul ---------------------------------------------------------------------


def test_matmul_identity(f64):
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    np.testing.assert_array_equal(matmul(a, eye).data, a.data)
    np.testing.assert_array_equal(matmul(eye, a).data, a.data)


def test_matmul_matches_triple_loop(f64):
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, rtol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


# -- softmax ----------------------------------------------------------------------


def test_softmax_examples(f64):
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(softmax(Tensor([math.log(1), math.log(3)])).data, [0.25, 0.75], rtol=1e-12)


def test_softmax_direct_formula(f64):
    x = np.random.default_rng(0).normal(size=5)
    direct = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(softmax(Tensor(x)).data, direct, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=8),
    st.floats(-100, 100),
)
def test_softmax_normalised_and_shift_invariant(values, shift):
    with precision(64):
        x = Tensor(values)
        p = softmax(x).data
        assert np.all(p > 0)
        assert abs(p.sum() - 1) < 1e-6
        np.testing.assert_allclose(softmax(x + shift).data, p, atol=1e-6)


def test_softmax_no_overflow():
    p = softmax(Tensor([1000.0, 1000.0])).data
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_log_softmax_and_logsumexp(f64):
    x = np.random.default_rng(1).normal(size=(3, 4))
    np.testing.assert_allclose(log_softmax(Tensor(x)).data, np.log(softmax(Tensor(x)).data), atol=1e-12)
    np.testing.assert_allclose(logsumexp(Tensor(x), axis=1).data, np.log(np.exp(x).sum(axis=1)), atol=1e-12)


# -- attention --------------------------------------------------------------------


def test_attention_single_key(f64):
    q = Tensor([[1.0, 2.0]])
    kv = Tensor([[0.5, -1.0]])
    out, w = scaled_dot_attention(q, kv, np.ones((1, 1), bool))
    np.testing.assert_allclose(w.data, [[1.0]])
    np.testing.assert_allclose(out.data, kv.data)


def test_attention_identical_keys(f64):
    q = Tensor([[0.3, -0.2]])
    kv = Tensor([[1.0, 1.0], [1.0, 1.0]])
    _, w = scaled_dot_attention(q, kv, np.ones((1, 2), bool))
    np.testing.assert_allclose(w.data, [[0.5, 0.5]])


def test_attention_masked_key_matches_two_key_softmax(f64):
    rng = np.random.default_rng(5)
    q = rng.normal(size=(1, 4))
    kv = rng.normal(size=(3, 4))
    mask = np.array([[True, True, False]])
    _, w = scaled_dot_attention(Tensor(q), Tensor(kv), mask)
    raw = (q @ kv[:2].T)[0] / 2.0
    expected = np.exp(raw) / np.exp(raw).sum()
    np.testing.assert_allclose(w.data[0, :2], expected, rtol=1e-12)
    assert w.data[0, 2] == 0.0


def test_attention_fully_masked_row_is_zero(f64):
    q = Tensor(np.ones((2, 3)))
    kv = Tensor(np.ones((2, 3)))
    mask = np.array([[True, False], [False, False]])
    out, w = scaled_dot_attention(q, kv, mask)
    assert np.all(out.data[1] == 0) and np.all(w.data[1] == 0)
    assert np.all(np.isfinite(out.data))


def test_attention_mask_shape_error():
    with pytest.raises(DimensionError):
        scaled_dot_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))), np.ones((2, 3), bool))


# -- conv3d -----------------------------------------------------------------------


def _conv_oracle(x, k, stride=1, pad=0):
    c, t, h, w = x.shape
    co, _, kt, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    to = (t + 2 * pad - kt) // stride + 1
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((co, to, ho, wo))
    for o in range(co):
        for i in range(to):
            for j in range(ho):
                for l in range(wo):
                    for ci in range(c):
                        for a, b, d in itertools.product(range(kt), range(kh), range(kw)):
                            out[o, i, j, l] += xp[ci, i * stride + a, j * stride + b, l * stride + d] * k[o, ci, a, b, d]
    return out


def test_conv3d_counts_ones(f64):
    out = conv3d(Tensor(np.ones((1, 3, 3, 3))), Tensor(np.ones((1, 1, 3, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 27.0


def test_conv3d_delta_impulse_reproduces_flipped_kernel(f64):
    rng = np.random.default_rng(2)
    k = rng.normal(size=(2, 1, 3, 3, 3))
    x = np.zeros((1, 5, 5, 5))
    x[0, 2, 2, 2] = 1.0
    out = conv3d(Tensor(x), Tensor(k)).data
    np.testing.assert_allclose(out, _conv_oracle(x, k), rtol=1e-12)
    # output[o, i, j, l] = k[o, 0, 2 - i, 2 - j, 2 - l]
    np.testing.assert_allclose(out, k[:, 0, ::-1, ::-1, ::-1], rtol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv3d_matches_six_loop_oracle(f64, stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 4, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3, 3))
    np.testing.assert_allclose(
        conv3d(Tensor(x), Tensor(k), stride=stride, padding=pad).data, _conv_oracle(x, k, stride, pad), rtol=1e-10
    )


def test_conv3d_zero_input_gives_bias(f64):
    out = conv3d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.ones((2, 1, 3, 3, 3))), bias=Tensor([0.5, -1.0]), padding=1)
    np.testing.assert_array_equal(out.data[0], 0.5)
    np.testing.assert_array_equal(out.data[1], -1.0)


def test_conv3d_kernel_too_large():
    with pytest.raises(DimensionError):
        conv3d(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 1, 3, 3, 3))))


def test_max_pool3d_values(f64):
    x = np.arange(2 * 4 * 4, dtype=float).reshape(1, 2, 4, 4) * np.array([1, -1]).reshape(1, 2, 1, 1)
    out = max_pool3d(Tensor(x), (1, 2, 2)).data
    assert out.shape == (1, 2, 2, 2)
    np.testing.assert_array_equal(out[0, 0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(out[0, 1], [[-16, -18], [-24, -26]])


# -- gradients --------------------------------------------------------------------


def test_grad_check_sum_of_squares(f64):
    x = Tensor([1.0, 2.0], requires_grad=True)
    err = grad_check(lambda: (x * x).sum(), [x])
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
    assert err < 1e-8


def test_grad_check_requires_f64():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(NumericError):
        grad_check(lambda: (x * x).sum(), [x])


def test_grad_check_non_finite_loss(f64):
    x = Tensor([-1.0], requires_grad=True)
    with pytest.raises(NumericError):
        grad_check(lambda: x.log().sum(), [x])


PRIMITIVE_CASES = {
    "arith": lambda r: (
        lambda a, b: ((a * b + a / (b * b + 1.0) - b) ** 2).sum(),
        [_param(r, 3, 4), _param(r, 4)],
    ),
    "matmul_batched": lambda r: (lambda a, b: (matmul(a, b).tanh()).sum(), [_param(r, 2, 3, 4), _param(r, 4, 5)]),
    "softmax": lambda r: (lambda x, w: (softmax(x, axis=0) * w).sum(), [_param(r, 4, 3), _param(r, 4, 3)]),
    "log_softmax": lambda r: (lambda x, w: (log_softmax(x) * w).sum(), [_param(r, 2, 5), _param(r, 2, 5)]),
    "logsumexp": lambda r: (lambda x: (logsumexp(x, axis=1) ** 2).sum(), [_param(r, 3, 4)]),
    "masked_softmax": lambda r: (
        lambda x, w: (masked_softmax(x, np.array([[1, 1, 0], [0, 0, 0], [1, 0, 1]], bool)) * w).sum(),
        [_param(r, 3, 3), _param(r, 3, 3)],
    ),
    "attention": lambda r: (
        lambda q, kv, w: (scaled_dot_attention(q, kv, np.tril(np.ones((4, 4), bool)))[0] * w).sum(),
        [_param(r, 4, 3), _param(r, 4, 3), _param(r, 4, 3)],
    ),
    "layer_norm": lambda r: (
        lambda x, g, b, w: (layer_norm(x, g, b) * w).sum(),
        [_param(r, 3, 5), _param(r, 5), _param(r, 5), _param(r, 3, 5)],
    ),
    "linear_relu": lambda r: (
        lambda x, W, b: (linear(x, W, b).relu() ** 2).sum(),
        [_param(r, 2, 3, 4), _param(r, 4, 6), _param(r, 6)],
    ),
    "embedding": lambda r: (lambda E: (embedding(E, [[0, 2, 2], [1, 0, 3]]) ** 2).sum(), [_param(r, 4, 3)]),
    "shape_ops": lambda r: (
        lambda a, b: (
            concatenate([a.transpose(1, 0), b], axis=0).reshape(2, -1).swapaxes(0, 1)[1:, :].exp().sum()
            + stack([a, a * 2.0], axis=1).sum()
        ),
        [_param(r, 3, 2), _param(r, 4, 3)],
    ),
    "gather_where": lambda r: (
        lambda a: (
            take_along_axis(a, np.array([[0, 2], [1, 1], [2, 0]]), axis=1) ** 2
        ).sum()
        + where(np.array([[True, False, True]]), a, a * 3.0).sum(),
        [_param(r, 3, 3)],
    ),
    "max_mean": lambda r: (lambda a: a.max(axis=1).sum() + (a.mean(axis=0) ** 2).sum(), [_param(r, 4, 3)]),
    "conv3d": lambda r: (
        lambda x, k, b: (conv3d(x, k, b, stride=(1, 2, 1), padding=1).tanh()).sum(),
        [_param(r, 2, 3, 4, 4), _param(r, 2, 2, 3, 3, 3, scale=0.3), _param(r, 2)],
    ),
    "max_pool3d": lambda r: (lambda x: (max_pool3d(x, (1, 2, 2)) ** 2).sum(), [_param(r, 2, 3, 4, 4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_finite_differences(f64, name):
    fn, params = PRIMITIVE_CASES[name](np.random.default_rng(len(name)))
    err = grad_check(lambda: fn(*params), params, eps=1e-6)
    assert err < 1e-6, f"{name}: {err}"


def test_every_requires_grad_node_gets_gradient(f64):
    rng = np.random.default_rng(0)
    a = _param(rng, 3, 4)
    h = (a * 2.0).tanh()
    loss = (h * h).sum()
    loss.backward()
    for t in (a, h, loss):
        assert t.grad is not None and t.grad.shape == t.shape


def test_no_grad_builds_no_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        b = a * 2.0
    assert not b.requires_grad


def test_precision_switch():
    with precision(64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


# -- Adam / rng ---------------------------------------------------------------------


def test_adam_learning_rate_schedule():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([p], lr0=0.0005, shrink=0.99)
    for _ in range(2):
        p.grad = np.ones(2, dtype=np.float32)
        opt.step()
    assert opt.lr == pytest.approx(0.00049005, rel=1e-12)


def test_adam_first_step_moves_by_lr(f64):
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    opt = Adam([p], lr0=0.1, shrink=1.0, clip_norm=None)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9], rtol=1e-6)


def test_adam_skips_parameters_without_grad():
    p = Tensor(np.ones(3), requires_grad=True)
    q = Tensor(np.ones(3), requires_grad=True)
    before = q.data.tobytes()
    opt = Adam([p, q], lr0=0.1)
    p.grad = np.ones(3, dtype=np.float32)
    opt.step()
    assert q.data.tobytes() == before


def test_rng_streams_reproducible_and_distinct():
    a = make_rng(7, "init").normal(size=5)
    b = make_rng(7, "init").normal(size=5)
    c = make_rng(7, "shuffle").normal(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
