"""Tensor op semantics, gradient checks, and Adam behavior."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtuner import autodiff as ad
from oracles import finite_difference, rel_error, scalar_adam_steps, scalar_softmax

RNG = np.random.default_rng


def fd_check(build, arrays, h=1e-5, tol=1e-4):
    """Compare tape gradients of build(*tensors) against central differences."""
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    ad.backward(loss)

    def f(*arrs):
        with ad.no_grad():
            return build(*[ad.Tensor(a) for a in arrs]).item()

    fd = finite_difference(f, [a.copy() for a in arrays], h=h)
    for t, g in zip(tensors, fd):
        assert t.grad is not None
        assert rel_error(t.grad, g) <= tol, f"gradient mismatch: {rel_error(t.grad, g)}"


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(np.eye(2), ad.Tensor(a))
    assert np.array_equal(out.data, a)


def test_matmul_dot_product():
    out = ad.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.item() == 11.0


def test_matmul_grad_is_column_sums():
    rng = RNG(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    at = ad.Tensor(a, requires_grad=True)
    loss = ad.sum_all(ad.matmul(at, b))
    ad.backward(loss)
    expected = np.broadcast_to(b.sum(axis=1), (3, 4))
    assert rel_error(at.grad, expected) <= 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(ad.AutodiffError):
        ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_batched_broadcast_grads():
    rng = RNG(1)
    fd_check(
        lambda a, b: ad.sum_all(ad.tanh(ad.matmul(a, b))),
        [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 2))],
    )


# ---------------------------------------------------------------------------
# causal softmax


def test_causal_softmax_single_element():
    out = ad.causal_softmax_rows(np.array([[7.3]]))
    assert out.data.tolist() == [[1.0]]


def test_causal_softmax_two_by_two_zeros():
    out = ad.causal_softmax_rows(np.zeros((2, 2)))
    assert np.allclose(out.data, [[1.0, 0.0], [0.5, 0.5]], atol=1e-15)
    assert out.data[0, 1] == 0.0


def test_causal_softmax_last_row_matches_scalar_oracle():
    logits = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
    out = ad.causal_softmax_rows(logits)
    expected = scalar_softmax([1.0, 2.0, 3.0])
    assert np.allclose(out.data[2], expected, atol=1e-12)
    assert abs(out.data[2][0] - 0.09003) < 1e-5
    assert abs(out.data[2][1] - 0.24473) < 1e-5
    assert abs(out.data[2][2] - 0.66524) < 1e-5


@given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_causal_softmax_rows_sum_to_one(n, seed):
    logits = RNG(seed).normal(scale=3.0, size=(n, n))
    out = ad.causal_softmax_rows(logits).data
    assert np.all(out[np.triu_indices(n, k=1)] == 0.0)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_causal_softmax_grad():
    rng = RNG(2)
    weights = rng.normal(size=(4, 4))
    fd_check(
        lambda x: ad.sum_all(ad.mul(ad.causal_softmax_rows(x), weights)),
        [rng.normal(size=(4, 4))],
    )


def test_causal_softmax_rejects_non_square():
    with pytest.raises(ad.AutodiffError):
        ad.causal_softmax_rows(np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# pointwise ops


def test_sigmoid_at_zero():
    assert ad.sigmoid(np.array(0.0)).item() == 0.5


def test_layer_norm_constant_vector_is_zero():
    x = np.full((5,), 3.7)
    out = ad.layer_norm(x, np.ones(5), np.zeros(5))
    assert np.allclose(out.data, 0.0, atol=1e-12)


def test_dropout_eval_is_identity():
    x = ad.Tensor(RNG(3).normal(size=(4, 5)))
    out = ad.dropout(x, 0.1, train=False)
    assert out is x


def test_dropout_p_zero_is_identity():
    x = ad.Tensor(RNG(4).normal(size=(3, 3)))
    out = ad.dropout(x, 0.0, train=True, rng=RNG(0))
    assert np.array_equal(out.data, x.data)


def test_dropout_train_scales_survivors():
    x = np.ones((1000,))
    out = ad.dropout(ad.Tensor(x), 0.5, train=True, rng=RNG(5))
    kept = out.data != 0.0
    assert np.allclose(out.data[kept], 2.0)
    assert 300 < kept.sum() < 700


def test_dropout_rejects_bad_p():
    with pytest.raises(ad.AutodiffError):
        ad.dropout(ad.Tensor(np.ones(3)), 1.0, train=True, rng=RNG(0))


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_ones_times_two():
    x = np.ones((1, 3, 3))
    w = np.full((1, 1, 1, 1), 2.0)
    out = ad.conv2d(x, w, np.zeros(1))
    assert out.data.shape == (1, 3, 3)
    assert np.all(out.data == 2.0)


def test_conv2d_pixel_stack_shapes():
    # 84x84 RGB through the 8/4/3 stride-4/2/1 stack lands on 64 x 7 x 7.
    x = np.zeros((3, 84, 84))
    h1 = ad.conv2d(x, np.zeros((32, 3, 8, 8)), np.zeros(32), stride=4)
    assert h1.data.shape == (32, 20, 20)
    h2 = ad.conv2d(h1, np.zeros((64, 32, 4, 4)), np.zeros(64), stride=2)
    assert h2.data.shape == (64, 9, 9)
    h3 = ad.conv2d(h2, np.zeros((64, 64, 3, 3)), np.zeros(64), stride=1)
    assert h3.data.shape == (64, 7, 7)
    assert h3.data.size == 3136


def test_conv2d_grid_stack_shapes():
    x = np.zeros((20, 7, 7))
    h1 = ad.conv2d(x, np.zeros((40, 20, 3, 3)), np.zeros(40), stride=1, padding=1)
    assert h1.data.shape == (40, 7, 7)
    h2 = ad.conv2d(h1, np.zeros((80, 40, 3, 3)), np.zeros(80), stride=1, padding=1)
    assert h2.data.shape == (80, 7, 7)
    assert h2.data.size == 3920


def test_conv2d_rejects_empty_output():
    with pytest.raises(ad.AutodiffError):
        ad.conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 4, 4)), np.zeros(1))


def test_conv2d_grad():
    rng = RNG(6)
    fd_check(
        lambda x, w, b: ad.sum_all(ad.tanh(ad.conv2d(x, w, b, stride=2, padding=1))),
        [rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3,))],
        tol=1e-5,
    )


# ---------------------------------------------------------------------------
# backward plumbing


def test_backward_sum_grad_is_ones():
    x = ad.Tensor(RNG(7).normal(size=(3, 4)), requires_grad=True)
    ad.backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_composite_matches_finite_differences():
    rng = RNG(8)
    fd_check(
        lambda w, x: ad.sum_all(ad.mul(ad.sigmoid(w), x)),
        [rng.normal(size=(4,)), rng.normal(size=(4,))],
        tol=1e-5,
    )


def test_backward_disconnected_parameter_has_no_grad():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    other = ad.Tensor(np.ones(3), requires_grad=True)
    ad.backward(ad.sum_all(ad.scale(x, 2.0)))
    assert other.grad is None
    assert np.array_equal(x.grad, np.full(3, 2.0))


def test_backward_accumulates_across_calls():
    x = ad.Tensor(np.ones(2), requires_grad=True)
    ad.backward(ad.sum_all(x))
    ad.backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.full(2, 2.0))


def test_backward_rejects_non_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    y = ad.scale(x, 1.0)
    with pytest.raises(ad.AutodiffError):
        ad.backward(y)


def test_no_grad_suppresses_tape():
    ad.reset_tape()
    with ad.no_grad():
        x = ad.Tensor(np.ones(3), requires_grad=True)
        ad.sum_all(ad.sigmoid(x))
    assert ad.tape_length() == 0


# ---------------------------------------------------------------------------
# gradient sweep across every differentiable op (randomized trials)

OP_CASES = {
    "matmul": lambda rng: (
        lambda a, b: ad.sum_all(ad.tanh(ad.matmul(a, b))),
        [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
    ),
    "add": lambda rng: (
        lambda a, b: ad.sum_all(ad.sigmoid(ad.add(a, b))),
        [rng.normal(size=(3, 4)), rng.normal(size=(4,))],
    ),
    "sub": lambda rng: (
        lambda a, b: ad.sum_all(ad.tanh(ad.sub(a, b))),
        [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))],
    ),
    "mul": lambda rng: (
        lambda a, b: ad.sum_all(ad.tanh(ad.mul(a, b))),
        [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))],
    ),
    "affine": lambda rng: (
        lambda x: ad.sum_all(ad.sigmoid(ad.affine(x, -1.5, 0.25))),
        [rng.normal(size=(5,))],
    ),
    "sigmoid": lambda rng: (lambda x: ad.sum_all(ad.sigmoid(x)), [rng.normal(size=(6,))]),
    "tanh": lambda rng: (lambda x: ad.sum_all(ad.tanh(x)), [rng.normal(size=(6,))]),
    "relu": lambda rng: (lambda x: ad.sum_all(ad.relu(x)), [rng.normal(size=(6,)) + 0.3]),
    "log": lambda rng: (lambda x: ad.sum_all(ad.log(x)), [rng.uniform(0.5, 2.0, size=(6,))]),
    "layer_norm": lambda rng: (
        lambda x, g, b: ad.sum_all(ad.tanh(ad.layer_norm(x, g, b))),
        [rng.normal(size=(3, 5)), rng.normal(size=(5,)), rng.normal(size=(5,))],
    ),
    "causal_softmax_rows": lambda rng: (
        (lambda w: lambda x: ad.sum_all(ad.mul(ad.causal_softmax_rows(x), w)))(rng.normal(size=(4, 4))),
        [rng.normal(size=(4, 4))],
    ),
    "conv2d": lambda rng: (
        lambda x, w, b: ad.sum_all(ad.tanh(ad.conv2d(x, w, b, padding=1))),
        [rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2,))],
    ),
    "reshape_transpose": lambda rng: (
        lambda x: ad.sum_all(ad.tanh(ad.transpose(ad.reshape(x, (2, 3, 2)), (1, 0, 2)))),
        [rng.normal(size=(12,))],
    ),
    "narrow": lambda rng: (
        lambda x: ad.sum_all(ad.tanh(ad.narrow(x, 1, 1, 2))),
        [rng.normal(size=(3, 4))],
    ),
    "even_rows": lambda rng: (
        lambda x: ad.sum_all(ad.tanh(ad.even_rows(x))),
        [rng.normal(size=(5, 3))],
    ),
    "interleave_rows": lambda rng: (
        lambda a, b: ad.sum_all(ad.tanh(ad.interleave_rows(a, b))),
        [rng.normal(size=(3, 4)), rng.normal(size=(2, 4))],
    ),
    "softmax_cross_entropy": lambda rng: (
        (lambda y: lambda x: ad.softmax_cross_entropy(x, y))(rng.integers(0, 4, size=(5,))),
        [rng.normal(size=(5, 4))],
    ),
    "clip": lambda rng: (
        lambda x: ad.sum_all(ad.clip(x, -0.5, 0.5)),
        [rng.normal(size=(8,))],
    ),
    "dropout_like_mask": lambda rng: (
        (lambda keep: lambda x: ad.sum_all(ad.mul(x, keep)))((rng.random(size=(6,)) > 0.3) / 0.7),
        [rng.normal(size=(6,))],
    ),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_gradients_match_finite_differences(name):
    for trial in range(20):
        build, arrays = OP_CASES[name](RNG(1000 * trial + hash(name) % 997))
        fd_check(build, arrays)


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_bias_corrected():
    p = ad.Tensor(np.array([0.0]), requires_grad=True)
    p.grad = np.array([1.0])
    opt = ad.Adam({"p": p}, lr=1e-4)
    opt.step()
    assert abs(p.data[0] + 1e-4) < 1e-12  # mhat = vhat = 1 on step one


def test_adam_zero_grad_leaves_params():
    p = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    opt = ad.Adam({"p": p})
    opt.step()
    assert np.array_equal(p.data, [1.0, 2.0])


def test_adam_three_steps_match_scalar_oracle():
    grads = [1.0, -1.0, 1.0]
    expected = scalar_adam_steps(grads, lr=1e-4)
    p = ad.Tensor(np.array([0.0]), requires_grad=True)
    opt = ad.Adam({"p": p}, lr=1e-4)
    for g, want in zip(grads, expected):
        p.grad = np.array([g])
        opt.step()
        assert abs(p.data[0] - want) < 1e-12


def test_adam_nan_gradient_aborts_without_mutation():
    p = ad.Tensor(np.array([1.0]), requires_grad=True)
    opt = ad.Adam({"w": p})
    p.grad = np.array([np.nan])
    with pytest.raises(ad.AutodiffError, match="w"):
        opt.step()
    assert opt.t == 0
    assert p.data[0] == 1.0


# ---------------------------------------------------------------------------
# determinism


def test_same_seed_bit_identical_forward_backward():
    def run():
        rng = RNG(42)
        x = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        w = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        h = ad.dropout(ad.tanh(ad.matmul(x, w)), 0.2, train=True, rng=RNG(7))
        loss = ad.softmax_cross_entropy(h, np.array([0, 1, 2, 3]))
        val = loss.item()
        ad.backward(loss)
        return val, x.grad.copy(), w.grad.copy()

    v1, gx1, gw1 = run()
    v2, gx2, gw2 = run()
    assert v1 == v2
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)
