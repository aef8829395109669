import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitfqt.layers import (
    AGP_BITS,
    BinaryConv,
    BinaryLinear,
    GradMode,
    conv_out_size,
    fold,
    sign,
    unfold,
)
from bitfqt.quant import counters
from bitfqt.rng import make_rng
from tests.helpers import unbiasedness_gap

QUANT_MODES = [GradMode.PSQ1, GradMode.PSQ8, GradMode.AGP_SCQ]


def surrogate_sign(x, x0):
    """sign(x0) plus the straight-through slope inside the clip region."""
    return sign(x0) + (x - x0) * (np.abs(x0) <= 1.0)


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30)


def _fd(f, x, eps=1e-6):
    """Central differences of scalar f with respect to every entry of x."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        grad[i] = (hi - lo) / (2 * eps)
    return grad


def _linear_case(seed, n=5, din=7, dout=4):
    r = make_rng(seed)
    layer = BinaryLinear.create(din, dout, r)
    layer.weight[...] = r.uniform(-1.5, 1.5, size=layer.weight.shape)
    layer.scale[...] = r.uniform(0.5, 2.0, size=dout)
    h = r.uniform(-1.5, 1.5, size=(n, din))
    return r, layer, h


def linear_fd_check(seed):
    r, layer, h = _linear_case(seed)
    w0, h0 = layer.weight.copy(), h.copy()
    weights = r.standard_normal((h.shape[0], layer.weight.shape[1]))
    w, gamma, x = layer.weight.copy(), layer.scale.copy(), h.copy()

    def loss():
        y = (surrogate_sign(x, h0) @ surrogate_sign(w, w0)) * gamma
        return float((y * weights).sum())

    layer.forward(h)
    dh, dw, dgamma = layer.backward(weights, None)
    errs = [_rel_err(dh, _fd(loss, x)), _rel_err(dw, _fd(loss, w)), _rel_err(dgamma, _fd(loss, gamma))]
    return max(errs)


def _direct_conv(x, w, stride, pad, pad_value=0.0):
    n, c, hh, ww = x.shape
    d, _, k, _ = w.shape
    ho, wo = conv_out_size(hh, k, stride, pad), conv_out_size(ww, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=pad_value)
    out = np.zeros((n, d, ho, wo))
    for b in range(n):
        for o in range(d):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride : i * stride + k, j * stride : j * stride + k]
                    out[b, o, i, j] = (patch * w[o]).sum()
    return out


def conv_fd_check(seed, stride=1, pad=1):
    r = make_rng(seed)
    layer = BinaryConv.create(2, 3, 3, r, stride=stride, pad=pad)
    layer.weight[...] = r.uniform(-1.5, 1.5, size=layer.weight.shape)
    layer.scale[...] = r.uniform(0.5, 2.0, size=3)
    x = r.uniform(-1.5, 1.5, size=(2, 2, 5, 4))
    x0, w0 = x.copy(), layer.weight.copy()
    w, gamma = layer.weight.copy(), layer.scale.copy()
    out = layer.forward(x)
    weights = r.standard_normal(out.shape)

    def loss():
        # zero padding binarizes to sign(0) = -1
        y = _direct_conv(surrogate_sign(x, x0), surrogate_sign(w, w0), stride, pad, -1.0)
        return float((y * gamma[None, :, None, None] * weights).sum())

    dx, dw, dgamma = layer.backward(weights, None)
    return max(_rel_err(dx, _fd(loss, x)), _rel_err(dw, _fd(loss, w)), _rel_err(dgamma, _fd(loss, gamma)))


def test_linear_forward_hand_example():
    layer = BinaryLinear(np.array([[1.0], [-1.0]]), np.array([2.0]))
    np.testing.assert_array_equal(layer.forward(np.array([[1.0, -2.0]])), [[4.0]])
    layer.scale[:] = 0
    np.testing.assert_array_equal(layer.forward(np.array([[1.0, -2.0]])), [[0.0]])


@given(st.integers(1, 6), st.integers(1, 90), st.integers(1, 6), st.integers(0, 2**32))
def test_linear_forward_dense_oracle(n, din, dout, seed):
    r = make_rng(seed)
    layer = BinaryLinear.create(din, dout, r)
    layer.scale[...] = r.uniform(0.1, 2, size=dout)
    h = r.standard_normal((n, din))
    expect = (sign(h) @ sign(layer.weight)) * layer.scale
    np.testing.assert_allclose(layer.forward(h), expect, rtol=1e-12, atol=0)


def test_init_scale_positive(rng):
    layer = BinaryLinear.create(5, 3, rng)
    assert (layer.scale == 1.0).all()
    conv = BinaryConv.create(2, 3, 3, rng)
    assert (conv.scale == 1.0).all() and conv.weight.shape == (3, 2, 3, 3)


@pytest.mark.parametrize("seed", range(5))
def test_linear_fd_ste_surrogate(seed):
    assert linear_fd_check(seed) <= 1e-4


@pytest.mark.parametrize("seed,stride,pad", [(0, 1, 1), (1, 2, 0), (2, 1, 0)])
def test_conv_fd_ste_surrogate(seed, stride, pad):
    assert conv_fd_check(seed, stride, pad) <= 1e-4


def test_backward_before_forward(rng):
    with pytest.raises(RuntimeError):
        BinaryLinear.create(3, 2, rng).backward(np.zeros((1, 2)), rng)
    with pytest.raises(RuntimeError):
        BinaryConv.create(1, 1, 1, rng).backward(np.zeros((1, 1, 2, 2)), rng)


def test_shape_errors(rng):
    layer = BinaryLinear.create(3, 2, rng)
    with pytest.raises(ValueError):
        layer.forward(np.zeros((2, 4)))
    layer.forward(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        layer.backward(np.zeros((3, 2)), rng)


def test_agp_bits_validated(rng):
    layer = BinaryLinear.create(3, 2, rng, GradMode.AGP_SCQ, bits=3)
    layer.forward(rng.standard_normal((4, 3)))
    with pytest.raises(ValueError):
        layer.backward(rng.standard_normal((4, 2)), rng)
    assert AGP_BITS == (2, 4, 8)


def test_non_finite_gradient_raises(rng):
    layer = BinaryLinear.create(3, 2, rng)
    layer.scale[:] = 1e308
    layer.forward(rng.standard_normal((2, 3)))
    with pytest.raises(FloatingPointError):
        layer.backward(np.full((2, 2), 1e10), rng)


@pytest.mark.parametrize("mode", list(GradMode))
def test_zero_output_gradient_gives_zero(mode, rng):
    layer = BinaryLinear.create(6, 5, rng, mode, 4)
    layer.forward(rng.uniform(-1, 1, (4, 6)))
    for g in layer.backward(np.zeros((4, 5)), rng):
        assert not np.any(g)


def _flat_grads(layer, h, dy, mode, rng):
    layer.mode = mode
    layer.forward(h)
    dh, dw, _ = layer.backward(dy, rng)
    return np.concatenate([dh.ravel(), dw.ravel()])[None, :]


@pytest.mark.parametrize("mode", QUANT_MODES)
def test_linear_backward_unbiased(mode):
    r = make_rng(21)
    layer = BinaryLinear.create(12, 9, r, bits=4)
    layer.weight[...] = r.uniform(-1.2, 1.2, size=layer.weight.shape)
    h = r.uniform(-1.5, 1.5, (10, 12))
    dy = r.standard_normal((10, 9)) * r.pareto(1.5, size=(10, 1))
    exact = _flat_grads(layer, h, dy, GradMode.FULL, None)
    err, tol = unbiasedness_gap(exact, lambda _, rr: _flat_grads(layer, h, dy, mode, rr), 4000, r)
    assert err <= tol


@pytest.mark.parametrize("mode", [GradMode.PSQ1, GradMode.AGP_SCQ])
def test_conv_backward_unbiased(mode):
    r = make_rng(22)
    conv = BinaryConv.create(2, 3, 3, r, pad=1, bits=4)
    x = r.uniform(-1.5, 1.5, (2, 2, 4, 4))
    dy = r.standard_normal((2, 3, 4, 4))

    def grads(m, rr):
        conv.mode = m
        conv.forward(x)
        dx, dw, _ = conv.backward(dy, rr)
        return np.concatenate([dx.ravel(), dw.ravel()])[None, :]

    exact = grads(GradMode.FULL, None)
    err, tol = unbiasedness_gap(exact, lambda _, rr: grads(mode, rr), 2000, r)
    assert err <= tol


def test_agp_all_kept_matches_full_in_expectation():
    # with one group per budget slot every p is 1: only rounding noise remains
    r = make_rng(5)
    layer = BinaryLinear.create(6, 4, r, bits=2)
    h = r.uniform(-1, 1, (2, 6))
    dy = r.standard_normal((2, 4))
    layer.forward(h)
    exact = _flat_grads(layer, h, dy, GradMode.FULL, None)
    err, tol = unbiasedness_gap(exact, lambda _, rr: _flat_grads(layer, h, dy, GradMode.AGP_SCQ, rr), 4000, r)
    assert err <= tol


def test_agp_weight_path_never_dequantizes(rng):
    layer = BinaryLinear.create(16, 8, rng, GradMode.AGP_SCQ, 4)
    conv = BinaryConv.create(2, 4, 3, rng, pad=1, mode=GradMode.AGP_SCQ, bits=4)
    before = counters.copy()
    for _ in range(3):
        layer.forward(rng.standard_normal((10, 16)))
        dh, dw, _ = layer.backward(rng.standard_normal((10, 8)), rng)
        conv.forward(rng.standard_normal((2, 2, 5, 5)))
        conv.backward(rng.standard_normal((2, 4, 5, 5)), rng)
    assert counters == before
    assert dh.shape == (10, 16) and dw.shape == (16, 8)
    info = layer.last_info
    assert set(info) == {"grad", "masks"}


def test_psq_and_full_modes_are_instrumented(rng):
    layer = BinaryLinear.create(4, 3, rng)
    for mode, key in ((GradMode.FULL, "float_gemm"), (GradMode.PSQ1, "dequantize")):
        layer.mode = mode
        layer.forward(rng.standard_normal((2, 4)))
        before = counters[key]
        layer.backward(rng.standard_normal((2, 3)), rng)
        assert counters[key] > before


def test_unfold_examples(rng):
    x = np.arange(4.0).reshape(1, 1, 2, 2)
    np.testing.assert_array_equal(unfold(x, 1), [[0], [1], [2], [3]])
    y = rng.standard_normal((3, 2, 4, 4))
    assert unfold(y, 4).shape == (3, 32)
    np.testing.assert_array_equal(unfold(y, 4)[1], y[1].ravel())
    with pytest.raises(ValueError):
        unfold(y, 6)
    with pytest.raises(ValueError):
        unfold(y[0], 1)


def test_fold_examples(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    np.testing.assert_array_equal(fold(unfold(x, 1), x.shape, 1), x)
    x = rng.standard_normal((2, 3, 4, 6))
    np.testing.assert_array_equal(fold(unfold(x, 2, stride=2), x.shape, 2, stride=2), x)
    with pytest.raises(ValueError):
        fold(np.zeros((3, 3)), x.shape, 2, stride=2)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 7), st.integers(1, 3),
       st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**32))
def test_unfold_fold_adjoint(n, c, size, k, stride, pad, seed):
    r = make_rng(seed)
    x = r.standard_normal((n, c, size, size + 1))
    u = unfold(x, k, stride, pad)
    g = r.standard_normal(u.shape)
    assert np.isclose((u * g).sum(), (x * fold(g, x.shape, k, stride, pad)).sum())


@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 6), st.integers(1, 3),
       st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**32))
def test_unfold_gemm_matches_direct_conv(n, c, size, k, stride, pad, seed):
    r = make_rng(seed)
    x = r.standard_normal((n, c, size, size))
    w = r.standard_normal((2, c, k, k))
    ho = conv_out_size(size, k, stride, pad)
    y = (unfold(x, k, stride, pad) @ w.reshape(2, -1).T).reshape(n, ho, ho, 2).transpose(0, 3, 1, 2)
    np.testing.assert_allclose(y, _direct_conv(x, w, stride, pad), atol=1e-10)


def test_binary_conv_forward_matches_direct(rng):
    conv = BinaryConv.create(3, 4, 3, rng, stride=2, pad=1)
    conv.scale[...] = rng.uniform(0.5, 2, 4)
    x = rng.standard_normal((2, 3, 7, 6))
    expect = _direct_conv(sign(x), sign(conv.weight), 2, 1, -1.0) * conv.scale[None, :, None, None]
    np.testing.assert_allclose(conv.forward(x), expect, atol=1e-12)


@pytest.mark.parametrize("mode", list(GradMode))
def test_1x1_conv_equals_linear(mode):
    r = make_rng(8)
    conv = BinaryConv.create(5, 3, 1, r, mode=mode, bits=4)
    lin = BinaryLinear(conv.weight.reshape(3, 5).T.copy(), conv.scale.copy(), mode, 4)
    x = r.standard_normal((2, 5, 3, 2))
    rows = x.transpose(0, 2, 3, 1).reshape(-1, 5)
    y = conv.forward(x)
    np.testing.assert_array_equal(y.transpose(0, 2, 3, 1).reshape(-1, 3), lin.forward(rows))
    dy = r.standard_normal(y.shape)
    dx, dw, dg = conv.backward(dy, make_rng(1))
    dh, dwl, dgl = lin.backward(dy.transpose(0, 2, 3, 1).reshape(-1, 3), make_rng(1))
    np.testing.assert_array_equal(dx.transpose(0, 2, 3, 1).reshape(-1, 5), dh)
    np.testing.assert_array_equal(dw.reshape(3, 5).T, dwl)
    np.testing.assert_array_equal(dg, dgl)
