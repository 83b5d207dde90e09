import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wordgan import tensor as T
from wordgan.tensor import Tensor, finite_diff_check, new_tensor


def naive_conv2d(x, k, stride, pad):
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += xp[b, ic, i * stride + a, j * stride + bb] * k[oc, ic, a, bb]
                    out[b, oc, i, j] = acc
    return out


def weighted_sum(out, weights):
    return T.sum(T.multiply(out, weights))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- construction ----------------------------------------------------------

def test_new_tensor_shapes():
    t = new_tensor([2, 2], [1, 2, 3, 4])
    assert t.size == 4 and t.shape == (2, 2)
    with pytest.raises(ValueError):
        new_tensor([3], [1, 2])
    with pytest.raises(ValueError):
        new_tensor([0, 2], [])


def test_tracked_leaf_gets_grad_after_backward():
    t = new_tensor([1], [0.0], track_gradient=True)
    assert t.node_id is not None and t.grad is None
    T.backward(T.sum(T.sigmoid(t)))
    assert t.grad.shape == (1,)
    assert new_tensor([1], [0.0]).node_id is None


# --- matmul ----------------------------------------------------------------

def test_matmul_values():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ b).data, b.data)
    np.testing.assert_array_equal((a @ b).data, [[19, 22], [43, 50]])
    with pytest.raises(ValueError):
        T.matmul(a, Tensor(np.ones((3, 2))))


def test_matmul_gradients(rng):
    a0, b0 = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    w = rng.normal(size=(4, 3))
    assert finite_diff_check(lambda a: weighted_sum(T.matmul(a, Tensor(b0)), w), a0) < 1e-4
    assert finite_diff_check(lambda b: weighted_sum(T.matmul(Tensor(a0), b), w), b0) < 1e-4


# --- elementwise -----------------------------------------------------------

def test_unary_anchor_values():
    z = Tensor([0.0])
    assert T.unary("sigmoid", z).data[0] == 0.5
    assert T.unary("tanh", z).data[0] == 0.0
    assert T.unary("leaky_relu", Tensor([-1.0]), alpha=0.2).data[0] == pytest.approx(-0.2)
    assert T.unary("negate", Tensor([3.0])).data[0] == -3.0
    with pytest.raises(ValueError):
        T.unary("log", Tensor([0.0, 1.0]))
    with pytest.raises(ValueError):
        T.unary("cube", z)


def test_sigmoid_gradient_at_zero():
    x = Tensor([0.0], requires_grad=True)
    T.backward(T.sum(T.sigmoid(x)))
    assert x.grad[0] == 0.25
    assert finite_diff_check(lambda v: T.sum(T.sigmoid(v)), np.array([0.0])) < 1e-8


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "leaky_relu", "relu", "negate", "log"])
def test_unary_gradients(kind, rng):
    x0 = rng.uniform(0.1, 2.0, size=(3, 4)) if kind == "log" else rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    assert finite_diff_check(lambda x: weighted_sum(T.unary(kind, x), w), x0) < 1e-4


def test_sigmoid_is_stable_for_large_inputs():
    out = T.sigmoid(Tensor([-800.0, 800.0])).data
    assert out[0] == 0.0 and out[1] == 1.0


def test_binary_values_and_broadcast():
    np.testing.assert_array_equal(T.binary("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4, 6])
    m = Tensor(np.arange(6.0).reshape(2, 3))
    bias = Tensor([10.0, 20.0, 30.0])
    np.testing.assert_array_equal((m + bias).data, [[10, 21, 32], [13, 24, 35]])
    with pytest.raises(ValueError):
        m + Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        T.binary("divide", m, m)


@pytest.mark.parametrize("kind", ["add", "subtract", "multiply"])
def test_binary_gradients(kind, rng):
    a0, b0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    w = rng.normal(size=(2, 3))
    assert finite_diff_check(lambda a: weighted_sum(T.binary(kind, a, Tensor(b0)), w), a0) < 1e-4
    assert finite_diff_check(lambda b: weighted_sum(T.binary(kind, Tensor(a0), b), w), b0) < 1e-4


def test_multiply_gradient_is_other_operand(rng):
    a = Tensor(rng.normal(size=4), requires_grad=True)
    b = rng.normal(size=4)
    T.backward(T.sum(a * Tensor(b)))
    np.testing.assert_allclose(a.grad, b)


def test_broadcast_gradient_sums_rows(rng):
    m0 = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 3))
    bias = Tensor(np.zeros(3), requires_grad=True)
    T.backward(weighted_sum(Tensor(m0) + bias, w))
    np.testing.assert_allclose(bias.grad, w.sum(axis=0))
    assert finite_diff_check(lambda b: weighted_sum(Tensor(m0) * b, w), rng.normal(size=3)) < 1e-4


# --- concat ----------------------------------------------------------------

def test_concat_shapes_and_inverse(rng):
    feat = Tensor(rng.normal(size=(2, 64, 4, 4)))
    cond = Tensor(rng.normal(size=(2, 8, 4, 4)))
    joined = T.concat([feat, cond], axis=1)
    assert joined.shape == (2, 72, 4, 4)
    np.testing.assert_array_equal(joined[:, :64].data, feat.data)
    np.testing.assert_array_equal(joined[:, 64:].data, cond.data)
    with pytest.raises(ValueError):
        T.concat([feat, Tensor(np.ones((3, 8, 4, 4)))], axis=1)


def test_concat_gradient_is_ones():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((3, 2)), requires_grad=True)
    T.backward(T.sum(T.concat([a, b], axis=0)))
    np.testing.assert_array_equal(a.grad, np.ones((2, 2)))
    np.testing.assert_array_equal(b.grad, np.ones((3, 2)))


# --- convolution -----------------------------------------------------------

def test_conv2d_window_sum():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))
    assert T.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), stride=2).shape == (1, 1, 2, 2)


def test_conv2d_errors():
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 2, 2))), stride=2)
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 2, 2))))
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


@pytest.mark.parametrize("stride,pad,hw", [(1, 0, 5), (2, 1, 6), (2, 1, 8), (1, 1, 4)])
def test_conv2d_matches_naive_loops(stride, pad, hw, rng):
    x = rng.normal(size=(2, 3, hw, hw))
    k = rng.normal(size=(4, 3, 4 if stride == 2 else 3, 4 if stride == 2 else 3))
    if (hw + 2 * pad - k.shape[2]) % stride:
        pytest.skip("non-exact geometry")
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(k), stride, pad).data,
                               naive_conv2d(x, k, stride, pad), atol=1e-10, rtol=0)


def test_conv2d_gradients(rng):
    x0, k0 = rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(3, 2, 4, 4))
    b0 = rng.normal(size=3)
    w = rng.normal(size=(2, 3, 3, 3))
    f_x = lambda x: weighted_sum(T.conv2d(x, Tensor(k0), 2, 1, bias=Tensor(b0)), w)  # noqa: E731
    f_k = lambda k: weighted_sum(T.conv2d(Tensor(x0), k, 2, 1), w)  # noqa: E731
    f_b = lambda b: weighted_sum(T.conv2d(Tensor(x0), Tensor(k0), 2, 1, bias=b), w)  # noqa: E731
    assert finite_diff_check(f_x, x0) < 1e-4
    assert finite_diff_check(f_k, k0) < 1e-4
    assert finite_diff_check(f_b, b0) < 1e-4


def test_conv_transpose_single_tap():
    k = np.arange(1.0, 5.0).reshape(1, 1, 2, 2)
    out = T.conv_transpose2d(Tensor([[[[3.0]]]]), Tensor(k), stride=2)
    np.testing.assert_array_equal(out.data, 3.0 * k)


def test_conv_transpose_shape():
    out = T.conv_transpose2d(Tensor(np.ones((1, 5, 4, 4))), Tensor(np.ones((5, 2, 4, 4))), stride=2, padding=1)
    assert out.shape == (1, 2, 8, 8)
    with pytest.raises(ValueError):
        T.conv_transpose2d(Tensor(np.ones((1, 5, 4, 4))), Tensor(np.ones((4, 2, 4, 4))))


@pytest.mark.parametrize("stride,pad,hw,kk", [(2, 1, 4, 4), (1, 0, 3, 2), (2, 0, 3, 3), (1, 1, 5, 3)])
def test_conv_transpose_is_adjoint_of_conv(stride, pad, hw, kk, rng):
    x = rng.normal(size=(2, 3, hw, hw))
    k = rng.normal(size=(4, 3, kk, kk))
    cx = T.conv2d(Tensor(x), Tensor(k), stride, pad).data
    y = rng.normal(size=cx.shape)
    back = T.conv_transpose2d(Tensor(y), Tensor(k), stride, pad).data
    if back.shape != x.shape:
        pytest.skip("geometry not invertible")
    assert abs(np.sum(cx * y) - np.sum(x * back)) < 1e-10 * max(1.0, abs(np.sum(cx * y)))


def test_conv_transpose_gradients(rng):
    x0, k0 = rng.normal(size=(2, 3, 3, 3)), rng.normal(size=(3, 2, 4, 4))
    b0 = rng.normal(size=2)
    w = rng.normal(size=(2, 2, 6, 6))
    assert finite_diff_check(lambda x: weighted_sum(T.conv_transpose2d(x, Tensor(k0), 2, 1), w), x0) < 1e-4
    assert finite_diff_check(lambda k: weighted_sum(T.conv_transpose2d(Tensor(x0), k, 2, 1), w), k0) < 1e-4
    assert finite_diff_check(
        lambda b: weighted_sum(T.conv_transpose2d(Tensor(x0), Tensor(k0), 2, 1, bias=b), w), b0) < 1e-4


# --- batch norm ------------------------------------------------------------

def test_batch_norm_standardized_input_passes_through(rng):
    x = rng.normal(size=(64, 2))
    x = (x - x.mean(0)) / x.std(0)
    out = T.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), epsilon=1e-5)
    np.testing.assert_allclose(out.data, x, atol=1e-4)


def test_batch_norm_zero_gamma_gives_beta(rng):
    beta = np.array([0.5, -1.0, 2.0])
    out = T.batch_norm(Tensor(rng.normal(size=(4, 3, 2, 2))), Tensor(np.zeros(3)), Tensor(beta))
    np.testing.assert_array_equal(out.data, np.broadcast_to(beta[None, :, None, None], (4, 3, 2, 2)))


def test_batch_norm_errors():
    g, b = Tensor(np.ones(3)), Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        T.batch_norm(Tensor(np.ones((1, 3, 2, 2))), g, b, mode="train")
    with pytest.raises(ValueError):
        T.batch_norm(Tensor(np.ones((2, 3, 2, 2))), g, b, epsilon=0.0)


def test_batch_norm_running_stats_and_eval(rng):
    x = rng.normal(2.0, 3.0, size=(8, 3, 2, 2))
    rm, rv = np.zeros(3), np.ones(3)
    g, b = Tensor(np.ones(3)), Tensor(np.zeros(3))
    T.batch_norm(Tensor(x), g, b, "train", rm, rv, momentum=1.0)
    np.testing.assert_allclose(rm, x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, x.var(axis=(0, 2, 3), ddof=1))
    out = T.batch_norm(Tensor(x[:1]), g, b, "eval", rm, rv, epsilon=1e-5)
    np.testing.assert_allclose(out.data, (x[:1] - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5))


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batch_norm_gradients(mode, rng):
    x0 = rng.normal(size=(4, 3, 2, 2))
    g0, b0 = rng.normal(size=3), rng.normal(size=3)
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
    w = rng.normal(size=(4, 3, 2, 2))

    def bn(x, g, b):
        return weighted_sum(T.batch_norm(x, g, b, mode, rm, rv, update_stats=False), w)

    assert finite_diff_check(lambda x: bn(x, Tensor(g0), Tensor(b0)), x0) < 1e-4
    assert finite_diff_check(lambda g: bn(Tensor(x0), g, Tensor(b0)), g0) < 1e-4
    assert finite_diff_check(lambda b: bn(Tensor(x0), Tensor(g0), b), b0) < 1e-4


# --- misc ops --------------------------------------------------------------

def test_reduction_reshape_tile_clamp_gradients(rng):
    x0 = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4, 2, 2))
    assert finite_diff_check(lambda x: weighted_sum(T.spatial_tile(x, 2, 2), w), x0) < 1e-4
    assert finite_diff_check(lambda x: T.sum(T.mean(x, axis=0) * Tensor(x0[0])), x0) < 1e-4
    assert finite_diff_check(lambda x: weighted_sum(x.reshape(2, 6), w.reshape(-1)[:12].reshape(2, 6)), x0) < 1e-4
    assert finite_diff_check(lambda x: weighted_sum(T.transpose(x), w[:, :, 0, 0].T), x0) < 1e-4
    c = T.clamp(Tensor([-1.0, 0.5, 2.0], requires_grad=True), 0.0, 1.0)
    np.testing.assert_array_equal(c.data, [0.0, 0.5, 1.0])


# --- backward --------------------------------------------------------------

def test_backward_square_and_reuse():
    x = Tensor([3.0], requires_grad=True)
    T.backward(T.sum(x * x))
    assert x.grad[0] == 6.0
    y = Tensor([1.5], requires_grad=True)
    T.backward(T.sum(y + y))
    assert y.grad[0] == 2.0


def test_backward_returns_leaf_map():
    x = Tensor([2.0], requires_grad=True)
    grads = T.backward(T.sum(T.tanh(x) * x))
    assert set(grads) == {x.node_id}


def test_backward_errors():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        T.backward(x * x)
    with pytest.raises(ValueError):
        T.backward(T.sum(Tensor([1.0, 2.0])))


def test_no_grad_does_not_record():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = T.sigmoid(x)
    assert not y.requires_grad


def test_non_finite_output_raises():
    with np.errstate(over="ignore"), pytest.raises(T.NonFiniteError):
        Tensor([1e308]) * Tensor([1e308])


def test_finite_diff_check_quadratic():
    assert finite_diff_check(lambda x: T.sum(x * x), np.array([0.3, -1.2, 2.0]), epsilon=1e-4) < 1e-8
    with pytest.raises(ValueError):
        finite_diff_check(lambda x: T.sum(x), np.ones(2), epsilon=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_property_random_composition_gradients(n, m, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(n, m))
    w1 = rng.normal(size=(m, 3))
    bias = rng.normal(size=3)

    def f(x):
        h = T.tanh(T.matmul(x, Tensor(w1)) + Tensor(bias))
        return T.sum(T.sigmoid(h) * h)

    assert finite_diff_check(f, x0) < 1e-4
