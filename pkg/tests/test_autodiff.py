import numpy as np
import pytest

from tsgad import autodiff as ad
from tsgad.autodiff import Tensor
from tsgad.checks import gradient_check, random_tensor


def test_matmul_identity():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    assert np.array_equal(ad.matmul(eye, m).data, m.data)


def test_matmul_hand_arithmetic():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    assert np.array_equal(ad.matmul(a, b).data, [[3.0], [7.0]])


def test_matmul_zero_annihilates():
    z = Tensor(np.zeros((2, 3)))
    b = Tensor(np.arange(12.0).reshape(3, 4))
    assert np.array_equal(ad.matmul(z, b).data, np.zeros((2, 4)))


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_relu_definition():
    assert np.array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_exp_log_inverse_pair():
    x = np.array([0.5, 1.0, 3.0])
    out = ad.exp(ad.log(Tensor(x)))
    np.testing.assert_allclose(out.data, x, rtol=1e-15)


def test_log_domain_error():
    with pytest.raises(ValueError, match="strictly positive"):
        ad.log(Tensor([1.0, 0.0]))


def test_sigmoid_symmetry():
    assert ad.sigmoid(Tensor([0.0])).data[0] == 0.5


def test_softmax_constant_row_uniform():
    out = ad.softmax_rows(Tensor([[3.0, 3.0, 3.0, 3.0]]))
    np.testing.assert_allclose(out.data, np.full((1, 4), 0.25), atol=1e-15)


def test_softmax_closed_form():
    out = ad.softmax_rows(Tensor([[0.0, np.log(3.0)]]))
    np.testing.assert_allclose(out.data, [[0.25, 0.75]], atol=1e-12)


def test_softmax_large_logits_no_overflow():
    out = ad.softmax_rows(Tensor([[1000.0, 0.0]]))
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-12)


def test_softmax_rows_sum_to_one_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(size=(rng.integers(1, 8), rng.integers(2, 8)))
        rows = ad.softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(rows >= 0.0)


def test_backward_sum_gives_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_quadratic():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ad.backward((x * x).sum())
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_rejects_nonscalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(x * 2.0)


def test_grad_accumulates_across_uses():
    x = Tensor([1.0], requires_grad=True)
    loss = (x * 2.0 + x * 3.0).sum()
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, [5.0])


def test_no_grad_blocks_recording():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ad.no_grad():
        y = (x * x).sum()
    assert not y.requires_grad


def test_broadcast_add_grad_shapes():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones((1, 4)), requires_grad=True)
    ad.backward((a + b).sum())
    assert a.grad.shape == (3, 4)
    assert b.grad.shape == (1, 4)
    np.testing.assert_array_equal(b.grad, np.full((1, 4), 3.0))


def test_outputs_never_alias_inputs():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    for out in (ad.reshape(x, (3, 2)), ad.transpose(x), ad.take(x, (slice(None), 0)),
                ad.flip_last(x)):
        out.data[...] = -99.0
    np.testing.assert_array_equal(x.data, np.arange(6.0).reshape(2, 3))


def test_forward_determinism():
    def run(seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(4, 4)))
        b = Tensor(rng.normal(size=(4, 4)))
        return ad.softmax_rows(ad.matmul(a, ad.tanh(b))).data

    assert np.array_equal(run(3), run(3))


# finite-difference checks: every differentiable op, randomized small tensors

def _composite_loss(ops, tensors):
    a, b = tensors
    c = ad.matmul(a, b)
    d = ad.tanh(c) + ad.sigmoid(c) * ad.relu(c - 0.1)
    e = ad.softmax_rows(d)
    f = ad.exp(e * 0.3) + ad.log(e + 1.1)
    return (f * f).mean()


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_composite(seed):
    rng = np.random.default_rng(seed)
    a = random_tensor(rng, (3, 4))
    b = random_tensor(rng, (4, 3))
    err = gradient_check(lambda: _composite_loss(None, (a, b)), [a, b])
    assert err <= 1e-4


@pytest.mark.parametrize(
    "make_loss",
    [
        lambda t: ad.sum_(ad.exp(t)),
        lambda t: ad.sum_(ad.log(t + 2.0)),
        lambda t: ad.sum_(ad.sqrt(t + 2.0)),
        lambda t: ad.sum_(ad.absolute(t) * t),
        lambda t: ad.sum_(ad.relu(t) * 2.0),
        lambda t: ad.sum_(ad.sigmoid(t) + ad.tanh(t)),
        lambda t: ad.sum_(ad.softmax_rows(t) ** 2),
        lambda t: ad.mean_(t, axis=0).sum(),
        lambda t: ad.sum_(ad.transpose(t) @ t),
        lambda t: ad.sum_(ad.reshape(t, (6, 1)) * 3.0),
        lambda t: ad.sum_(ad.flip_last(t) * t),
        lambda t: ad.sum_(ad.concat([t, t * 2.0], axis=1)),
        lambda t: ad.sum_(t[:, 1:] * 2.0 + t[0:1, 1:]),
        lambda t: ad.sum_(t / (t + 3.0)),
        lambda t: ad.sum_((2.0 - t) * (1.0 / (t + 3.0))),
    ],
)
def test_gradcheck_single_ops(make_loss):
    rng = np.random.default_rng(42)
    t = random_tensor(rng, (2, 3))
    err = gradient_check(lambda: make_loss(t), [t])
    assert err <= 1e-4


def test_gradcheck_batched_matmul():
    rng = np.random.default_rng(7)
    a = random_tensor(rng, (2, 3, 4))
    w = random_tensor(rng, (4, 5))

    def loss():
        return ad.sum_(ad.matmul(a, w) ** 2)

    assert gradient_check(loss, [a, w]) <= 1e-4


def test_gradcheck_randomized_small_dims():
    rng = np.random.default_rng(11)
    for _ in range(10):
        m, k, n = rng.integers(1, 7, size=3)
        a = random_tensor(rng, (int(m), int(k)))
        b = random_tensor(rng, (int(k), int(n)))

        def loss():
            return ad.sum_(ad.tanh(ad.matmul(a, b)))

        assert gradient_check(loss, [a, b]) <= 1e-4
