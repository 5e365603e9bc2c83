"""Primitive ops: worked examples, oracles, gradients and the tape contract."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weatherremover import tensor as T
from weatherremover.errors import ShapeError
from weatherremover.gradcheck import check_function
from weatherremover.tensor import Tape, Tensor


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- examples

def test_conv1x1_sums_channels_plus_bias():
    y = T.conv2d_1x1(t(np.ones((1, 2, 1, 1))), t([[1.0, 1.0]]), t([0.5]))
    assert y.shape == (1, 1, 1, 1)
    assert y.data.item() == 2.5


def test_pool_to_one_is_the_mean():
    y = T.adaptive_avg_pool(t([[[[1.0, 2.0], [3.0, 4.0]]]]), 1)
    assert y.data.item() == 2.5


def test_unshuffle_channel_order():
    y = T.pixel_unshuffle(t([[[[1.0, 2.0], [3.0, 4.0]]]]), 2)
    assert y.shape == (1, 4, 1, 1)
    assert y.data.ravel().tolist() == [1.0, 2.0, 3.0, 4.0]


def test_dw3x3_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 3, 5, 4))
    w = np.zeros((3, 3, 3))
    w[:, 1, 1] = 1.0
    np.testing.assert_array_equal(T.conv2d_dw3x3(t(x), t(w)).data, x)


def test_dw3x3_zero_padding_at_corner():
    x = np.ones((1, 1, 3, 3))
    y = T.conv2d_dw3x3(t(x), t(np.ones((1, 3, 3)))).data[0, 0]
    assert y[0, 0] == 4.0 and y[1, 1] == 9.0 and y[0, 1] == 6.0


def test_layer_norm_normalises_channels_per_pixel(rng):
    x = rng.standard_normal((2, 6, 3, 4)) * 5 + 2
    y = T.layer_norm(t(x), t(np.ones(6)), t(np.zeros(6))).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1.0, rtol=1e-5)


def test_gelu_reference_points():
    y = T.gelu(t([0.0, 1.0, -1.0])).data
    assert y[0] == 0.0
    np.testing.assert_allclose(y[1], 0.8411919906082768, rtol=1e-12)
    np.testing.assert_allclose(y[2], -0.15880800939172324, rtol=1e-12)


def test_softmax_rows_sum_to_one_even_for_huge_logits(rng):
    x = rng.standard_normal((2, 3, 4, 9)) * 300
    s = T.softmax_lastdim(t(x)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_matmul_leading_dims_must_match():
    with pytest.raises(ShapeError):
        T.matmul_batched(t(np.ones((2, 3, 4, 5))), t(np.ones((3, 2, 5, 4))))


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        T.conv2d_1x1(t(np.ones((1, 3, 2, 2))), t(np.ones((4, 2))))
    with pytest.raises(ShapeError):
        T.conv2d_dw3x3(t(np.ones((1, 3, 2, 2))), t(np.ones((2, 3, 3))))
    with pytest.raises(ShapeError):
        T.conv2d_3x3(t(np.ones((3, 2, 2))), t(np.ones((4, 3, 3, 3))))


def test_pool_size_must_be_positive():
    with pytest.raises(ValueError):
        T.adaptive_avg_pool(t(np.ones((1, 1, 4, 4))), 0)


def test_tensor_rank_is_capped():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


def test_non_finite_output_is_rejected():
    with pytest.raises(FloatingPointError):
        T.scale(t([1e308]), 10.0)


# ------------------------------------------------------- torch as an oracle

torch = pytest.importorskip("torch")
F = torch.nn.functional


def _th(a):
    return torch.from_numpy(np.ascontiguousarray(a))


@pytest.mark.parametrize("shape", [(1, 3, 5, 7), (2, 4, 8, 8), (1, 2, 1, 3)])
def test_dense_and_depthwise_conv_match_torch(backend, rng, shape):
    B, C, H, W = shape
    x = rng.standard_normal(shape)
    w = rng.standard_normal((5, C, 3, 3))
    b = rng.standard_normal(5)
    ours = T.conv2d_3x3(t(x), t(w), t(b)).data
    ref = F.conv2d(_th(x), _th(w), _th(b), padding=1).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)
    wd = rng.standard_normal((C, 3, 3))
    ours = T.conv2d_dw3x3(t(x), t(wd)).data
    ref = F.conv2d(_th(x), _th(wd[:, None]), padding=1, groups=C).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("hw,P", [((7, 7), 7), ((8, 8), 7), ((13, 5), 7), ((3, 2), 7), ((720, 48), 7), ((9, 10), 4)])
def test_adaptive_pool_matches_torch(backend, rng, hw, P):
    x = rng.standard_normal((1, 2, *hw))
    ours = T.adaptive_avg_pool(t(x), P).data
    ref = F.adaptive_avg_pool2d(_th(x), P).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-12, atol=1e-12)


def test_shuffles_match_torch(rng):
    x = rng.standard_normal((2, 12, 4, 6))
    np.testing.assert_array_equal(T.pixel_shuffle(t(x), 2).data, F.pixel_shuffle(_th(x), 2).numpy())
    np.testing.assert_array_equal(T.pixel_unshuffle(t(x), 2).data, F.pixel_unshuffle(_th(x), 2).numpy())


def test_layer_norm_and_gelu_match_torch(rng):
    x = rng.standard_normal((2, 6, 3, 4))
    g, b = rng.standard_normal(6), rng.standard_normal(6)
    ours = T.layer_norm(t(x), t(g), t(b)).data
    ref = F.layer_norm(_th(x).permute(0, 2, 3, 1), (6,), _th(g), _th(b), eps=1e-6).permute(0, 3, 1, 2).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(T.gelu(t(x)).data, F.gelu(_th(x), approximate="tanh").numpy(), rtol=1e-12)


# ------------------------------------------------------------- gradients

@pytest.mark.parametrize("name,fn,shapes", [
    ("conv2d_1x1", T.conv2d_1x1, [(2, 3, 4, 5), (4, 3), (4,)]),
    ("conv2d_dw3x3", T.conv2d_dw3x3, [(2, 3, 5, 4), (3, 3, 3), (3,)]),
    ("conv2d_3x3", T.conv2d_3x3, [(1, 2, 4, 3), (3, 2, 3, 3), (3,)]),
    ("pool", lambda x: T.adaptive_avg_pool(x, 3), [(2, 2, 7, 5)]),
    ("gelu", T.gelu, [(2, 3, 3, 3)]),
    ("softmax", T.softmax_lastdim, [(2, 2, 3, 6)]),
    ("layer_norm", T.layer_norm, [(2, 5, 2, 3), (5,), (5,)]),
])
def test_primitive_gradients_under_each_backend(backend, rng, name, fn, shapes):
    arrays = [rng.standard_normal(s) for s in shapes]
    res = check_function(name, fn, arrays)
    assert res.passed, res


def test_broadcast_add_reduces_gradient_to_operand_shape():
    a = t(np.ones((2, 3, 4, 4)), grad=True)
    b = t(np.ones((1, 3, 1, 1)), grad=True)
    with Tape() as tape:
        tape.backward(T.sum_all(T.add(a, b)))
    assert b.grad.shape == (1, 3, 1, 1)
    np.testing.assert_array_equal(b.grad, np.full((1, 3, 1, 1), 32.0))


def test_gradients_accumulate_when_a_tensor_is_reused():
    x = t([2.0, 3.0], grad=True)
    with Tape() as tape:
        tape.backward(T.sum_all(T.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [4.0, 6.0])


# ---------------------------------------------------------------- tape

def test_backward_requires_scalar():
    x = t(np.ones(3), grad=True)
    with Tape() as tape:
        y = T.scale(x, 2.0)
        with pytest.raises(ValueError):
            tape.backward(y)


def test_tape_runs_backward_once_until_reset():
    x = t([1.0, 2.0], grad=True)
    with Tape() as tape:
        loss = T.sum_all(T.scale(x, 3.0))
        tape.backward(loss)
        with pytest.raises(RuntimeError):
            tape.backward(loss)
    tape.reset()
    assert tape.nodes == []


def test_ops_outside_a_tape_record_nothing():
    x = t([1.0], grad=True)
    y = T.scale(x, 2.0)
    with Tape() as tape:
        pass
    assert tape.nodes == [] and y.data.item() == 2.0


def test_f32_stays_f32(rng):
    x = Tensor(rng.standard_normal((1, 2, 3, 3)).astype(np.float32), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 3, 3)).astype(np.float32), requires_grad=True)
    with Tape() as tape:
        y = T.conv2d_dw3x3(x, w)
        tape.backward(T.sum_all(y))
    assert y.dtype == np.float32 and x.grad.dtype == np.float32 and w.grad.dtype == np.float32


# ------------------------------------------------------------ properties

@settings(max_examples=100, deadline=None)
@given(b=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(1, 4), w=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_shuffle_unshuffle_are_inverse(b, c, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((b, 4 * c, 2 * h, 2 * w))
    np.testing.assert_array_equal(T.pixel_shuffle(T.pixel_unshuffle(t(x), 2), 2).data, x)
    np.testing.assert_array_equal(T.pixel_unshuffle(T.pixel_shuffle(t(x), 2), 2).data, x)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 12), scale=st.floats(0.01, 500.0), seed=st.integers(0, 2**31))
def test_softmax_normalisation(n, scale, seed):
    x = np.random.default_rng(seed).standard_normal((1, 2, 3, n)) * scale
    s = T.softmax_lastdim(t(x)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(h=st.integers(1, 20), w=st.integers(1, 20), P=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_pooling_preserves_the_mean_of_a_constant(h, w, P, seed):
    v = np.random.default_rng(seed).uniform(-3, 3)
    y = T.adaptive_avg_pool(t(np.full((1, 1, h, w), v)), P).data
    assert y.shape == (1, 1, P, P)
    np.testing.assert_allclose(y, v, rtol=1e-12)
