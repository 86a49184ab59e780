"""Engine semantics: op contracts, tape rules, and spot gradient checks.

The exhaustive per-op finite-difference sweeps live in test_acceptance.py;
here each op gets its value oracle and one gradcheck instance.
"""
import numpy as np
import pytest

from persr import autodiff as ad
from gradcheck import assert_grads_ok, check_op


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# ---------------------------------------------------------------- tape rules

def test_backward_sum_gives_ones(rng):
    x = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
    ad.backward(ad.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_gradients_accumulate_on_reuse(rng):
    x = ad.Tensor(rng.normal(size=5), requires_grad=True, dtype=np.float64)
    ad.backward(ad.tsum(ad.add(x, x)))
    np.testing.assert_allclose(x.grad, 2.0)


def test_second_backward_rejected(rng):
    x = ad.Tensor(rng.normal(size=3), requires_grad=True, dtype=np.float64)
    loss = ad.tsum(x)
    ad.backward(loss)
    with pytest.raises(ad.TapeError):
        ad.backward(loss)


def test_consumed_tape_rejected_from_new_head(rng):
    x = ad.Tensor(rng.normal(size=3), requires_grad=True, dtype=np.float64)
    y = ad.relu(x)
    ad.backward(ad.tsum(y))
    with pytest.raises(ad.TapeError):
        ad.backward(ad.tmean(y))


def test_nonscalar_loss_rejected(rng):
    x = ad.Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.relu(x))


def test_loss_without_tape_rejected():
    with pytest.raises(ad.TapeError):
        ad.backward(ad.Tensor(1.0))


def test_detach_cuts_the_tape(rng):
    x = ad.Tensor(rng.normal(size=4), requires_grad=True, dtype=np.float64)
    y = ad.relu(x).detach()
    assert not y.requires_grad
    z = ad.Tensor(np.zeros(4), requires_grad=True, dtype=np.float64)
    ad.backward(ad.tsum(ad.add(y, z)))
    assert x.grad is None


def test_no_grad_blocks_recording(rng):
    x = ad.Tensor(rng.normal(size=4), requires_grad=True)
    with ad.no_grad():
        y = ad.relu(x)
    assert not y.requires_grad and y._backward is None


def test_nonfinite_forward_is_an_error():
    x = ad.Tensor(np.array([1.0, 0.0]), requires_grad=True)
    with pytest.raises(ArithmeticError):
        ad.log(x)
    big = ad.Tensor(np.array([3.0e38], dtype=np.float32))
    with np.errstate(over="ignore"), pytest.raises(ArithmeticError):
        ad.mul(big, big)


def test_params_survive_multiple_steps(rng):
    # leaves are never marked spent; fresh tapes may reuse them freely
    w = ad.Tensor(rng.normal(size=3), requires_grad=True, dtype=np.float64)
    for _ in range(3):
        w.grad = None
        ad.backward(ad.tsum(ad.mul(w, w)))
        np.testing.assert_allclose(w.grad, 2 * w.data)


# ---------------------------------------------------------------- elementwise

def test_add_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.add(ad.Tensor(np.zeros(3)), ad.Tensor(np.zeros(4)))


def test_leaky_relu_values():
    x = ad.Tensor(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_allclose(ad.leaky_relu(x, 0.2).data, [-0.4, 0.0, 3.0])


def test_leaky_relu_alpha_one_is_identity(rng):
    x = ad.Tensor(rng.normal(size=16), dtype=np.float64)
    np.testing.assert_array_equal(ad.leaky_relu(x, 1.0).data, x.data)


def test_leaky_relu_alpha_validated():
    with pytest.raises(ValueError):
        ad.leaky_relu(ad.Tensor(np.zeros(2)), 0.0)
    with pytest.raises(ValueError):
        ad.leaky_relu(ad.Tensor(np.zeros(2)), 1.5)


def test_leaky_relu_subgradient_at_zero_is_alpha():
    x = ad.Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
    ad.backward(ad.tsum(ad.leaky_relu(x, 0.2)))
    np.testing.assert_allclose(x.grad, [0.2])


def test_sigmoid_center_and_open_interval():
    assert float(ad.sigmoid(ad.Tensor(np.array(0.0)))) == pytest.approx(0.5)
    for dtype in (np.float32, np.float64):
        y = ad.sigmoid(ad.Tensor(np.array([-1000.0, 1000.0], dtype=dtype)))
        assert np.all(y.data > 0) and np.all(y.data < 1)


def test_softplus_matches_reference(rng):
    x = rng.normal(size=50) * 30
    np.testing.assert_allclose(ad.softplus(ad.Tensor(x, dtype=np.float64)).data,
                               np.logaddexp(0, x), rtol=1e-12)


def test_softmax_rows_sum_to_one(rng):
    x = ad.Tensor(rng.normal(size=(8, 10)) * 5, dtype=np.float64)
    rows = ad.softmax(x).data.sum(axis=-1)
    np.testing.assert_allclose(rows, 1.0, atol=1e-12)


def test_softmax_survives_large_logits():
    x = ad.Tensor(np.array([[1000.0, 1000.0, -1000.0]]), dtype=np.float64)
    y = ad.softmax(x).data
    np.testing.assert_allclose(y, [[0.5, 0.5, 0.0]], atol=1e-12)


# ---------------------------------------------------------------- shape moves

def test_pixel_shuffle_layout():
    x = ad.Tensor(np.arange(4.0).reshape(1, 4, 1, 1))
    out = ad.pixel_shuffle(x, 2)
    np.testing.assert_array_equal(out.data[0, 0], [[0.0, 1.0], [2.0, 3.0]])


def test_pixel_shuffle_roundtrip(rng):
    x = ad.Tensor(rng.normal(size=(2, 8, 3, 5)), dtype=np.float64)
    back = ad.pixel_unshuffle(ad.pixel_shuffle(x, 2), 2)
    np.testing.assert_array_equal(back.data, x.data)
    fwd = ad.pixel_shuffle(ad.pixel_unshuffle(ad.Tensor(rng.normal(size=(1, 2, 4, 6))), 2), 2)
    assert fwd.shape == (1, 2, 4, 6)


def test_pixel_shuffle_channel_check():
    with pytest.raises(ad.ShapeError):
        ad.pixel_shuffle(ad.Tensor(np.zeros((1, 3, 2, 2))), 2)


def test_reshape_roundtrip(rng):
    x = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True, dtype=np.float64)
    ad.backward(ad.tsum(ad.reshape(x, (6, 4))))
    assert x.grad.shape == (2, 3, 4)


# ---------------------------------------------------------------- reductions

def test_mean_abs_value():
    x = ad.Tensor(np.array([-3.0, 0.0, 3.0]))
    assert float(ad.mean_abs(x)) == pytest.approx(2.0)


def test_cumsum_matches_numpy(rng):
    x = rng.normal(size=(4, 10))
    np.testing.assert_allclose(ad.cumsum_last(ad.Tensor(x, dtype=np.float64)).data,
                               np.cumsum(x, axis=-1))


def test_global_avg_pool_constant():
    x = ad.Tensor(np.full((2, 3, 5, 7), 0.25))
    np.testing.assert_allclose(ad.global_avg_pool(x).data, 0.25)


# ---------------------------------------------------------------- linear ops

def test_conv2d_identity_kernel(rng):
    x = ad.Tensor(rng.normal(size=(2, 3, 6, 6)), dtype=np.float64)
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = ad.conv2d(x, ad.Tensor(w), ad.Tensor(np.zeros(3)), stride=1, pad=1)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_stride2_shape(rng):
    x = ad.Tensor(rng.normal(size=(2, 3, 8, 8)))
    w = ad.Tensor(rng.normal(size=(5, 3, 3, 3)))
    out = ad.conv2d(x, w, ad.Tensor(np.zeros(5)), stride=2, pad=1)
    assert out.shape == (2, 5, 4, 4)


def test_conv2d_matches_naive_loop(rng):
    x = rng.normal(size=(2, 2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    for stride, pad in ((1, 1), (2, 1), (1, 0), (2, 0)):
        got = ad.conv2d(ad.Tensor(x, dtype=np.float64), ad.Tensor(w, dtype=np.float64),
                        ad.Tensor(b, dtype=np.float64), stride=stride, pad=pad).data
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        ho = (xp.shape[2] - 3) // stride + 1
        wo = (xp.shape[3] - 3) // stride + 1
        want = np.zeros((2, 3, ho, wo))
        for n in range(2):
            for co in range(3):
                for i in range(ho):
                    for j in range(wo):
                        patch = xp[n, :, i * stride:i * stride + 3, j * stride:j * stride + 3]
                        want[n, co, i, j] = (patch * w[co]).sum() + b[co]
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv2d_rejects_bad_operands(rng):
    x = ad.Tensor(np.zeros((1, 3, 8, 8)))
    with pytest.raises(ad.ShapeError):
        ad.conv2d(x, ad.Tensor(np.zeros((4, 2, 3, 3))), ad.Tensor(np.zeros(4)))
    with pytest.raises(ad.ShapeError):
        ad.conv2d(x, ad.Tensor(np.zeros((4, 3, 2, 2))), ad.Tensor(np.zeros(4)))
    with pytest.raises(ValueError):
        ad.conv2d(x, ad.Tensor(np.zeros((4, 3, 3, 3))), ad.Tensor(np.zeros(4)), stride=3)


def test_dense_shape_checks():
    with pytest.raises(ad.ShapeError):
        ad.dense(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 5))), ad.Tensor(np.zeros(5)))
    with pytest.raises(ad.ShapeError):
        ad.dense(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((3, 5))), ad.Tensor(np.zeros(4)))


def test_resample_axis_matches_matmul(rng):
    x = rng.normal(size=(2, 3, 6, 5))
    m = rng.normal(size=(4, 6))
    out = ad.resample_axis(ad.Tensor(x, dtype=np.float64), m, axis=2).data
    want = np.einsum("oh,nchw->ncow", m, x)
    np.testing.assert_allclose(out, want, atol=1e-12)


# ------------------------------------------------------- spot gradient checks

def test_gradcheck_conv2d(rng):
    errs = check_op(
        lambda x, w, b: ad.mean_abs(ad.conv2d(x, w, b, stride=2, pad=1)),
        [rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)])
    assert_grads_ok(errs)


def test_gradcheck_dense_chain(rng):
    errs = check_op(
        lambda x, w, b: ad.tmean(ad.sigmoid(ad.dense(x, w, b))),
        [rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)])
    assert_grads_ok(errs)


def test_gradcheck_softmax_cumsum(rng):
    errs = check_op(
        lambda x: ad.tsum(ad.mul(ad.cumsum_last(ad.softmax(x)), ad.cumsum_last(ad.softmax(x)))),
        [rng.normal(size=(3, 10))])
    assert_grads_ok(errs)


def test_gradcheck_pixel_shuffle_pool(rng):
    errs = check_op(
        lambda x: ad.tmean(ad.global_avg_pool(ad.pixel_shuffle(x, 2))),
        [rng.normal(size=(2, 8, 3, 3))])
    assert_grads_ok(errs)
