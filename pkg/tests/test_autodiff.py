import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from texavatar import autodiff as ad
from texavatar.autodiff import Tensor
from texavatar.gradcheck import check_gradients


def conv2d_loops(x, w, b, stride, padding):
    """Scalar-loop cross-correlation reference."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for s in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[s, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[s, o, i, j] = acc
    return out


# ---------------------------------------------------------------- conv2d


def test_conv2d_pointwise_kernel():
    out = ad.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor([[[[2.0]]]]), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_conv2d_full_window_sum():
    out = ad.conv2d(Tensor([[[[1, 2], [3, 4]]]]), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, [[[[10.0]]]])


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_scalar_loops(stride, padding):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    ref = conv2d_loops(x, w, b, stride, padding)
    assert out.shape == ref.shape
    np.testing.assert_allclose(out.data, ref, atol=1e-5, rtol=1e-5)


def test_conv2d_output_size():
    out = ad.conv2d(Tensor(np.zeros((1, 2, 9, 7))), Tensor(np.zeros((3, 2, 4, 3))), None, stride=2, padding=1)
    assert out.shape == (1, 3, (9 + 2 - 4) // 2 + 1, (7 + 2 - 3) // 2 + 1)


def test_conv2d_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(1, 3, 4, 4\).*\(2, 2, 3, 3\)"):
        ad.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))


def test_conv2d_kernel_must_fit():
    with pytest.raises(ValueError):
        ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


# ---------------------------------------------------------------- conv2d_transpose


def test_conv_transpose_single_pixel_spread():
    out = ad.conv2d_transpose(Tensor([[[[1.0]]]]), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]), stride=2)
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 2, 2)))


def test_conv_transpose_k4s2p1_doubles_size():
    out = ad.conv2d_transpose(Tensor(np.zeros((1, 3, 5, 6))), Tensor(np.zeros((3, 2, 4, 4))), None, 2, 1)
    assert out.shape == (1, 2, 10, 12)


@pytest.mark.parametrize("seed", range(5))
def test_conv_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    with ad.precision(np.float64):
        x = Tensor(rng.standard_normal((2, 3, 8, 8)))
        w = Tensor(rng.standard_normal((5, 3, 4, 4)))
        cx = ad.conv2d(x, w, None, stride=2, padding=1)
        y = Tensor(rng.standard_normal(cx.shape))
        lhs = np.sum(cx.data * y.data)
        rhs = np.sum(x.data * ad.conv2d_transpose(y, w, None, 2, 1).data)
    assert abs(lhs - rhs) <= 1e-4 * max(abs(lhs), 1.0)


def test_conv_transpose_rejects_channel_mismatch():
    with pytest.raises(ValueError, match="conv2d_transpose"):
        ad.conv2d_transpose(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 4, 4))))


# ---------------------------------------------------------------- softmax / sigmoid


def test_softmax_uniform():
    p = ad.channel_softmax(Tensor(np.zeros((1, 25, 2, 2))))
    np.testing.assert_allclose(p.data, 0.04, atol=1e-7)


def test_softmax_large_logits_stable():
    p = ad.channel_softmax(Tensor(np.array([1000.0, 0.0]).reshape(1, 2, 1, 1)))
    np.testing.assert_array_equal(p.data.reshape(-1), [1.0, 0.0])


def test_softmax_scalar_reference():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((1, 5, 2, 2))
    p = ad.channel_softmax(Tensor(z)).data
    for i in range(2):
        for j in range(2):
            e = [np.exp(z[0, c, i, j]) for c in range(5)]
            s = sum(e)
            for c in range(5):
                assert abs(p[0, c, i, j] - e[c] / s) < 1e-6


@given(arrays(np.float64, (1, 6, 3, 2), elements=st.floats(-1e4, 1e4)))
@settings(max_examples=60, deadline=None)
def test_softmax_is_simplex(z):
    p = ad.channel_softmax(Tensor(z)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-5)


def test_scaled_sigmoid_values():
    assert ad.scaled_sigmoid(Tensor(0.0), 32.0).data == pytest.approx(16.0)
    assert abs(ad.scaled_sigmoid(Tensor(100.0), 32.0).data - 32.0) < 1e-3


@given(arrays(np.float64, (7,), elements=st.floats(-15, 15)), st.floats(0.5, 300))
@settings(max_examples=60, deadline=None)
def test_scaled_sigmoid_range(x, scale):
    y = ad.scaled_sigmoid(Tensor(x), scale).data
    assert (y > 0).all() and (y < scale).all()


def test_scaled_sigmoid_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        ad.scaled_sigmoid(Tensor(1.0), 0.0)


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4)), requires_grad=True)
    ad.backward(ad.tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_quadratic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(ad.tensor_sum(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_nonscalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.mul(x, 2.0))


def test_backward_visits_ops_in_reverse_and_clears_tape():
    visited = []
    with ad.Tape() as tape:
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = ad.relu(ad.mul(x, 3.0))
        loss = ad.tensor_sum(ad.add(y, x))
        executed = [id(r.output) for r in tape.records]
        for rec in tape.records:
            fn = rec.backward
            rec.backward = (lambda f, o: lambda g: (visited.append(o), f(g))[1])(fn, id(rec.output))
        ad.backward(loss)
        assert len(tape) == 0
    assert visited == executed[::-1]
    assert x.grad.shape == x.shape


def test_unused_leaf_gets_zero_gradient():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([5.0], requires_grad=True)
    loss = ad.tensor_sum(ad.add(a, ad.mul(b, 0.0)))
    ad.backward(loss)
    assert b.grad.shape == b.shape and a.grad.shape == a.shape


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with ad.Tape() as tape, ad.no_grad():
        ad.mul(x, x)
        assert len(tape) == 0


def test_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(1)
    x, w = rng.standard_normal((1, 3, 9, 9)), rng.standard_normal((4, 3, 3, 3))
    a = ad.instance_norm(ad.conv2d(Tensor(x), Tensor(w), None, 1, 1), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    b = ad.instance_norm(ad.conv2d(Tensor(x), Tensor(w), None, 1, 1), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert a.data.tobytes() == b.data.tobytes()


def test_zero_extent_rejected():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


# ---------------------------------------------------------------- scalar oracles for the remaining ops


def test_relu_add_mul_l1_scalar_oracles():
    a = np.array([-1.5, 0.25, 2.0])
    b = np.array([0.5, -0.5, 1.0])
    np.testing.assert_array_equal(ad.relu(Tensor(a)).data, [0.0, 0.25, 2.0])
    np.testing.assert_allclose(ad.add(Tensor(a), Tensor(b)).data, [-1.0, -0.25, 3.0])
    np.testing.assert_allclose(ad.mul(Tensor(a), Tensor(b)).data, [-0.75, -0.125, 2.0])
    assert float(ad.l1_distance(Tensor(a), Tensor(b)).data) == pytest.approx((2.0 + 0.75 + 1.0) / 3)


def test_instance_norm_scalar_oracle():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, 3, 3))
    g, b = np.array([1.5, -0.5]), np.array([0.1, 0.2])
    out = ad.instance_norm(Tensor(x), Tensor(g), Tensor(b)).data
    for c in range(2):
        vals = [x[0, c, i, j] for i in range(3) for j in range(3)]
        m = sum(vals) / 9
        var = sum((v - m) ** 2 for v in vals) / 9
        for i in range(3):
            for j in range(3):
                ref = g[c] * (x[0, c, i, j] - m) / np.sqrt(var + 1e-5) + b[c]
                assert abs(out[0, c, i, j] - ref) < 1e-5


def test_adam_step_scalar_oracle():
    p, g = 0.5, 0.2
    m = v = 0.0
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    arr_p, arr_m, arr_v = np.array([p]), np.array([0.0]), np.array([0.0])
    for t in range(1, 4):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
        arr_p, arr_m, arr_v = ad.adam_step(arr_p, np.array([g]), arr_m, arr_v, t, lr, (b1, b2), eps)
    assert arr_p[0] == pytest.approx(p, rel=1e-12)


def test_adam_moves_quadratic_towards_minimum():
    x = Tensor([3.0, -2.0], requires_grad=True)
    opt = ad.Adam({"x": x}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ad.backward(ad.tensor_sum(ad.mul(x, x)))
        opt.step()
    assert np.abs(x.data).max() < 0.05


def test_bce_scalar_oracle():
    p = np.array([0.2, 0.7, 1.0])
    t = np.array([0.0, 1.0, 1.0])
    eps = 1e-7
    pc = np.clip(p, eps, 1 - eps)
    ref = -np.mean(t * np.log(pc) + (1 - t) * np.log(1 - pc))
    with ad.precision(np.float64):
        assert float(ad.binary_cross_entropy(Tensor(p), Tensor(t)).data) == pytest.approx(ref, rel=1e-12)


# ---------------------------------------------------------------- finite differences


def _fd(name, loss_fn, tensors, seed=0):
    res = check_gradients(name, loss_fn, tensors, n_probes=6, eps=1e-3, rtol=1e-2, seed=seed)
    assert res.ok, res.summary() + "\n" + "\n".join(map(str, res.probes))


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_fd_conv2d(rng):
    with ad.precision(np.float64):
        x, w, b = (Tensor(rng.standard_normal(s)) for s in [(2, 3, 7, 7), (4, 3, 3, 3), (4,)])
        proj = rng.standard_normal((2, 4, 4, 4))
        _fd("conv2d", lambda: ad.tensor_sum(ad.mul(ad.conv2d(x, w, b, 2, 1), proj)), [x, w, b])


def test_fd_conv2d_transpose(rng):
    with ad.precision(np.float64):
        x, w, b = (Tensor(rng.standard_normal(s)) for s in [(1, 3, 4, 4), (3, 2, 4, 4), (2,)])
        proj = rng.standard_normal((1, 2, 8, 8))
        _fd("conv2d_transpose", lambda: ad.tensor_sum(ad.mul(ad.conv2d_transpose(x, w, b, 2, 1), proj)), [x, w, b])


def test_fd_channel_softmax(rng):
    with ad.precision(np.float64):
        x = Tensor(rng.standard_normal((1, 5, 3, 3)))
        proj = rng.standard_normal((1, 5, 3, 3))
        _fd("channel_softmax", lambda: ad.tensor_sum(ad.mul(ad.channel_softmax(x), proj)), [x])


def test_fd_scaled_sigmoid(rng):
    with ad.precision(np.float64):
        x = Tensor(rng.standard_normal((4, 4)) * 2)
        proj = rng.standard_normal((4, 4))
        res = check_gradients("scaled_sigmoid", lambda: ad.tensor_sum(ad.mul(ad.scaled_sigmoid(x, 32.0), proj)),
                              [x], n_probes=8, rtol=1e-4)
        assert res.ok, res.summary()


def test_fd_relu(rng):
    with ad.precision(np.float64):
        x = Tensor(rng.standard_normal((5, 5)))
        x.data[np.abs(x.data) < 0.05] = 0.5  # keep probes off the kink
        proj = rng.standard_normal((5, 5))
        _fd("relu", lambda: ad.tensor_sum(ad.mul(ad.relu(x), proj)), [x])


def test_fd_instance_norm(rng):
    with ad.precision(np.float64):
        x, g, b = Tensor(rng.standard_normal((2, 3, 4, 4))), Tensor(rng.standard_normal(3)), Tensor(rng.standard_normal(3))
        proj = rng.standard_normal((2, 3, 4, 4))
        _fd("instance_norm", lambda: ad.tensor_sum(ad.mul(ad.instance_norm(x, g, b), proj)), [x, g, b])


def test_fd_add_mul_broadcast(rng):
    with ad.precision(np.float64):
        a, b = Tensor(rng.standard_normal((3, 4, 4))), Tensor(rng.standard_normal((1, 4, 4)))
        proj = rng.standard_normal((3, 4, 4))
        _fd("add/mul", lambda: ad.tensor_sum(ad.mul(ad.add(ad.mul(a, b), a), proj)), [a, b])


def test_fd_l1_distance(rng):
    with ad.precision(np.float64):
        a, b = Tensor(rng.standard_normal((3, 5))), Tensor(rng.standard_normal((3, 5)))
        _fd("l1_distance", lambda: ad.l1_distance(a, b), [a, b])


def test_fd_bce_and_log(rng):
    with ad.precision(np.float64):
        p = Tensor(rng.uniform(0.1, 0.9, (4, 4)))
        t = (rng.random((4, 4)) > 0.5).astype(float)
        _fd("bce", lambda: ad.binary_cross_entropy(p, t), [p])
        _fd("log", lambda: ad.tensor_sum(ad.log(p, 1e-7)), [p])


def test_fd_take_reshape_mean(rng):
    with ad.precision(np.float64):
        x = Tensor(rng.standard_normal((4, 3, 3)))
        proj = rng.standard_normal((1, 2, 9))
        _fd("take/reshape/mean",
            lambda: ad.add(ad.tensor_sum(ad.mul(ad.reshape(ad.take(x, slice(1, 3)), (1, 2, 9)), proj)), ad.mean(x)), [x])
