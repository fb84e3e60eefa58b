import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malgrid.layers import (
    ShapeError,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    he_uniform_init,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu,
    relu_backward,
    softmax,
)


def naive_conv(x, k, b):
    h, w, c = x.shape
    f = k.shape[3]
    out = np.zeros((h - 2, w - 2, f))
    for y in range(h - 2):
        for xx in range(w - 2):
            for ff in range(f):
                s = b[ff]
                for dy in range(3):
                    for dx in range(3):
                        for cc in range(c):
                            s += x[y + dy, xx + dx, cc] * k[dy, dx, cc, ff]
                out[y, xx, ff] = s
    return out


def test_conv_hand_sum():
    x = np.arange(1, 10, dtype=np.float32).reshape(3, 3, 1)
    out = conv2d_forward(x, np.ones((3, 3, 1, 1), np.float32), np.zeros(1, np.float32))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 45


def test_conv_zero_kernel_gives_bias(rng):
    x = rng.normal(size=(6, 5, 2)).astype(np.float32)
    out = conv2d_forward(x, np.zeros((3, 3, 2, 3), np.float32), np.array([0.5, -1, 2], np.float32))
    assert np.all(out == np.array([0.5, -1, 2], np.float32))


def test_conv_output_shape():
    out = conv2d_forward(np.zeros((32, 32, 1), np.float32), np.zeros((3, 3, 1, 32), np.float32), np.zeros(32, np.float32))
    assert out.shape == (30, 30, 32)


def test_conv_is_cross_correlation_not_convolution():
    x = np.zeros((3, 3, 1)); x[0, 0, 0] = 1.0
    k = np.zeros((3, 3, 1, 1)); k[0, 0, 0, 0] = 2.0
    assert conv2d_forward(x, k, np.zeros(1))[0, 0, 0] == 2.0


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 7), st.integers(3, 7), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_conv_matches_naive_loops(h, w, c, f, seed):
    rng = np.random.default_rng(seed)
    x, k, b = rng.normal(size=(h, w, c)), rng.normal(size=(3, 3, c, f)), rng.normal(size=f)
    np.testing.assert_allclose(conv2d_forward(x, k, b), naive_conv(x, k, b), rtol=1e-10, atol=1e-10)


def test_conv_batch_equals_per_sample(rng):
    x = rng.normal(size=(4, 6, 6, 2)).astype(np.float32)
    k = rng.normal(size=(3, 3, 2, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    batched = conv2d_forward(x, k, b)
    for i in range(4):
        np.testing.assert_allclose(batched[i], conv2d_forward(x[i], k, b), rtol=1e-6)


def test_conv_linearity(rng):
    k = rng.normal(size=(3, 3, 2, 4)).astype(np.float32)
    zero = np.zeros(4, np.float32)
    x, y = rng.normal(size=(2, 8, 8, 2)).astype(np.float32)
    a, b = 1.7, -0.6
    lhs = conv2d_forward(a * x + b * y, k, zero)
    rhs = a * conv2d_forward(x, k, zero) + b * conv2d_forward(y, k, zero)
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


@pytest.mark.parametrize("x_shape, k_shape, b_shape", [
    ((5, 5, 2), (3, 3, 1, 4), (4,)),
    ((5, 5, 1), (2, 2, 1, 4), (4,)),
    ((5, 5, 1), (3, 3, 1, 4), (3,)),
    ((2, 5, 1), (3, 3, 1, 4), (4,)),
])
def test_conv_shape_errors(x_shape, k_shape, b_shape):
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros(x_shape), np.zeros(k_shape), np.zeros(b_shape))


def test_maxpool_examples():
    out, arg = maxpool2x2_forward(np.array([[1.0, 2], [3, 4]]).reshape(2, 2, 1))
    assert out.tolist() == [[[4.0]]] and arg.tolist() == [[[3]]]
    out, _ = maxpool2x2_forward(np.zeros((15, 15, 2)))
    assert out.shape == (7, 7, 2)
    out, _ = maxpool2x2_forward(np.zeros((11, 11, 64)))
    assert out.shape == (5, 5, 64)
    out, arg = maxpool2x2_forward(np.full((4, 6, 3), 2.5))
    assert np.all(out == 2.5) and np.all(arg == 0)


def test_maxpool_matches_naive(rng):
    x = rng.normal(size=(7, 9, 3))
    out, _ = maxpool2x2_forward(x)
    for y in range(3):
        for xx in range(4):
            for c in range(3):
                assert out[y, xx, c] == x[2 * y : 2 * y + 2, 2 * xx : 2 * xx + 2, c].max()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_maxpool_backward_routes_to_argmax(h, w, c, seed):
    rng = np.random.default_rng(seed)
    # few distinct values so ties are common
    x = rng.integers(0, 3, size=(1, h, w, c)).astype(np.float64)
    out, arg = maxpool2x2_forward(x)
    dout = rng.normal(size=out.shape)
    dx = maxpool2x2_backward(x.shape, arg, dout)
    assert dx.sum() == pytest.approx(dout.sum())
    for y in range(h // 2):
        for xx in range(w // 2):
            for cc in range(c):
                win = x[0, 2 * y : 2 * y + 2, 2 * xx : 2 * xx + 2, cc]
                first = int(np.argmax(win.ravel()))  # first maximum in row-major order
                g = dx[0, 2 * y : 2 * y + 2, 2 * xx : 2 * xx + 2, cc].ravel()
                assert g[first] == dout[0, y, xx, cc]
                assert np.count_nonzero(np.delete(g, first)) == 0
    # dropped trailing row/column gets no gradient
    assert np.all(dx[0, 2 * (h // 2):] == 0) and np.all(dx[0, :, 2 * (w // 2):] == 0)


def test_dense_examples():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(dense_forward(x, np.eye(3), np.zeros(3)), x)
    b = np.array([0.1, 0.2])
    np.testing.assert_array_equal(dense_forward(np.zeros(3), np.ones((3, 2)), b), b)
    assert dense_forward(np.array([1.0, 1.0]), np.array([[2.0], [3.0]]), np.array([0.5])).tolist() == [5.5]
    with pytest.raises(ShapeError):
        dense_forward(np.zeros(4), np.ones((3, 2)), np.zeros(2))


def test_relu():
    assert relu(np.array([-3.0, 5.0, 0.0])).tolist() == [0.0, 5.0, 0.0]
    assert relu_backward(np.array([-1.0, 2.0, 0.0]), np.ones(3)).tolist() == [0.0, 1.0, 0.0]


def test_softmax_shift_invariant_and_normalised(rng):
    z = rng.normal(size=(50, 7)) * 10
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(z + 123.0), p, atol=1e-12)
    assert np.all(np.isfinite(softmax(np.array([[1e4, -1e4, 0.0]]))))


def test_he_uniform_bounds_and_determinism():
    w = he_uniform_init(9, (100, 100), 7)
    bound = np.sqrt(6 / 9)
    assert bound == pytest.approx(0.8165, abs=1e-4)
    assert np.abs(w).max() <= bound
    # spread actually reaches towards the bound
    assert np.abs(w).max() > 0.95 * bound
    assert np.abs(he_uniform_init(6, (10_000,), 3)).max() <= 1.0
    np.testing.assert_array_equal(he_uniform_init(9, (3, 3, 1, 32), 1), he_uniform_init(9, (3, 3, 1, 32), 1))
    assert not np.array_equal(he_uniform_init(9, (50,), 1), he_uniform_init(9, (50,), 2))
    with pytest.raises(ValueError):
        he_uniform_init(0, (2,), 1)


def _fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps; up = f()
        x[i] = orig - eps; down = f()
        x[i] = orig
        g[i] = (up - down) / (2 * eps)
    return g


def test_conv_backward_finite_differences(rng):
    x = rng.normal(size=(2, 5, 6, 2))
    k = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    w = rng.normal(size=(2, 3, 4, 3))  # fixed projection -> scalar loss
    loss = lambda: float(np.sum(conv2d_forward(x, k, b) * w))
    dx, dk, db = conv2d_backward(x, k, w)
    np.testing.assert_allclose(dx, _fd(loss, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dk, _fd(loss, k), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(db, _fd(loss, b), rtol=1e-6, atol=1e-8)


def test_dense_backward_finite_differences(rng):
    x, wt, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    proj = rng.normal(size=(3, 2))
    loss = lambda: float(np.sum(dense_forward(x, wt, b) * proj))
    dx, dw, db = dense_backward(x, wt, proj)
    np.testing.assert_allclose(dx, _fd(loss, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dw, _fd(loss, wt), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(db, _fd(loss, b), rtol=1e-6, atol=1e-8)
