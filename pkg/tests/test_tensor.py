"""Tensor engine: forward oracles, backward rules, finite-difference checks."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from gazemoe import tensor as T
from gazemoe.errors import ContractError, DimensionError
from gazemoe.tensor import Tensor, backward, finite_diff_check, no_grad


def finite_floats(lo, hi):
    return st.floats(min_value=lo, max_value=hi, allow_nan=False, allow_infinity=False)


# -- matmul --------------------------------------------------------------


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal((a @ b).data, b.data)


def test_matmul_zero():
    out = Tensor([[1.0, 2.0]]) @ Tensor([[0.0], [0.0]])
    assert np.array_equal(out.data, [[0.0]])


def test_matmul_hand_example():
    a = [[1.0, 2.0], [3.0, 4.0]]
    b = [[5.0], [6.0]]
    out = Tensor(a) @ Tensor(b)
    assert np.array_equal(out.data, [[17.0], [39.0]])
    assert np.array_equal(out.data, oracles.matmul_oracle(a, b))


def test_matmul_random_matches_oracle():
    rng = np.random.default_rng(7)
    for m, k, n in [(1, 1, 1), (2, 3, 4), (5, 2, 3)]:
        a = rng.normal(size=(m, k))
        b = rng.normal(size=(k, n))
        out = Tensor(a) @ Tensor(b)
        np.testing.assert_allclose(out.data, oracles.matmul_oracle(a, b), rtol=1e-12)


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError) as exc:
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 5)))
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_matmul_backward_exact():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    b = Tensor([[5.0], [6.0]], requires_grad=True)
    backward((a @ b).sum())
    # d sum(ab)/da = ones @ b.T ; d/db = a.T @ ones
    assert np.array_equal(a.grad, [[5.0, 6.0], [5.0, 6.0]])
    assert np.array_equal(b.grad, [[4.0], [6.0]])


# -- conv2d --------------------------------------------------------------


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 4, 5))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_zero_input():
    out = T.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.ones((2, 1, 3, 3))))
    assert out.shape == (1, 2, 2, 2)
    assert np.all(out.data == 0.0)


def test_conv2d_window_sum_example():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    w = np.ones((1, 1, 2, 2))
    out = T.conv2d(Tensor(x), Tensor(w))
    assert np.array_equal(out.data[0, 0], [[12.0, 16.0], [24.0, 28.0]])
    assert np.array_equal(out.data, oracles.conv2d_oracle(x, w))


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)])
def test_conv2d_random_matches_oracle(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, oracles.conv2d_oracle(x, w, stride, pad), atol=1e-12)


def test_conv2d_kernel_too_large():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 5, 5))))
    # padding can make the same kernel fit
    out = T.conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 5, 5))), pad=1)
    assert out.shape == (1, 1, 1, 1)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 2, 2))))


def test_conv2d_bad_stride():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))), stride=0)


# -- pooling -------------------------------------------------------------


def test_global_avg_pool_values():
    assert np.all(T.global_avg_pool(Tensor(np.full((2, 3, 4, 4), 7.0))).data == 7.0)
    assert np.all(T.global_avg_pool(Tensor(np.zeros((1, 2, 3, 3)))).data == 0.0)
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
    assert T.global_avg_pool(x).item() == 2.5


# -- activations ---------------------------------------------------------


def test_sigmoid_at_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_sigmoid_extreme_inputs_stay_finite():
    out = T.sigmoid(Tensor([-1e3, -50.0, 50.0, 1e3])).data
    assert np.all(np.isfinite(out))
    assert np.all((out >= 0.0) & (out <= 1.0))
    np.testing.assert_allclose(out, [0.0, 0.0, 1.0, 1.0], atol=1e-20)


def test_softmax_uniform_rows():
    out = T.softmax(Tensor([[3.0, 3.0, 3.0, 3.0]])).data
    np.testing.assert_array_equal(out, [[0.25, 0.25, 0.25, 0.25]])


def test_softmax_two_logit_example():
    out = T.softmax(Tensor([[1.0, 2.0]])).data[0]
    np.testing.assert_allclose(out, [0.26894, 0.73106], atol=1e-5)
    np.testing.assert_allclose(out, oracles.softmax_oracle([1.0, 2.0]), rtol=1e-12)


def test_softmax_no_overflow_at_1e3():
    out = T.softmax(Tensor([[1e3, -1e3, 0.0]])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)


def test_softmax_bad_axis():
    with pytest.raises(DimensionError):
        T.softmax(Tensor([[1.0, 2.0]]), axis=2)


def test_relu_forward():
    out = T.relu(Tensor([-2.0, 0.0, 3.0])).data
    np.testing.assert_array_equal(out, [0.0, 0.0, 3.0])


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5))
    np.testing.assert_allclose(
        T.log_softmax(Tensor(x)).data, np.log(T.softmax(Tensor(x)).data), atol=1e-12
    )


# -- backward ------------------------------------------------------------


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(1).normal(size=(3, 4)), requires_grad=True)
    backward(x.sum())
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_zero_loss_gives_zeros():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward((x * 0.0).sum())
    assert np.array_equal(x.grad, np.zeros(3))


def test_backward_sum_of_squares():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward((x * x).sum())
    assert np.array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_backward_rejects_detached_loss():
    with pytest.raises(ContractError):
        backward(Tensor(1.0))


def test_repeated_backward_accumulates():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward((x * x).sum())
    backward((x * x).sum())
    assert np.array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_diamond_graph():
    x = Tensor([2.0], requires_grad=True)
    a = x + 1.0
    b = x * 2.0
    backward((a * b).sum())
    # d(ab)/dx = b + 2a = 4 + 6
    assert np.array_equal(x.grad, [10.0])


def test_backward_broadcast_add():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    bias = Tensor(np.zeros(3), requires_grad=True)
    backward((x + bias).sum())
    assert np.array_equal(x.grad, np.ones((2, 3)))
    assert np.array_equal(bias.grad, [2.0, 2.0, 2.0])


def test_no_grad_blocks_recording():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.is_leaf


def test_detach_cuts_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = (x * x).detach()
    assert not y.requires_grad
    backward((x * y).sum())
    # y treated as a constant [1, 4]
    assert np.array_equal(x.grad, [1.0, 4.0])


# -- index ops -----------------------------------------------------------


def test_take_rows_forward_and_grad():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    out = T.take_rows(x, np.array([2, 0, 0]))
    assert np.array_equal(out.data, [[4.0, 5.0], [0.0, 1.0], [0.0, 1.0]])
    backward(out.sum())
    # row 0 selected twice -> gradient 2
    assert np.array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_put_rows_forward_and_grad():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    out = T.put_rows(x, np.array([2, 0]), num_rows=3)
    assert np.array_equal(out.data, [[3.0, 4.0], [0.0, 0.0], [1.0, 2.0]])
    backward((out * Tensor([[1.0, 1.0], [9.0, 9.0], [2.0, 2.0]])).sum())
    assert np.array_equal(x.grad, [[2.0, 2.0], [1.0, 1.0]])


def test_take_per_row_forward_and_grad():
    x = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], requires_grad=True)
    out = T.take_per_row(x, np.array([[2, 0], [1, 1]]))
    assert np.array_equal(out.data, [[3.0, 1.0], [5.0, 5.0]])
    backward(out.sum())
    assert np.array_equal(x.grad, [[1.0, 0.0, 1.0], [0.0, 2.0, 0.0]])


def test_put_per_row_forward_and_grad():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    out = T.put_per_row(x, np.array([[2, 0], [1, 3]]), width=4)
    assert np.array_equal(out.data, [[2.0, 0.0, 1.0, 0.0], [0.0, 3.0, 0.0, 4.0]])
    backward((out * out).sum())
    assert np.array_equal(x.grad, [[2.0, 4.0], [6.0, 8.0]])


# -- shape ops -----------------------------------------------------------


def test_reshape_and_transpose_grads():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward((x.reshape(3, 2).T * Tensor(np.arange(6.0).reshape(2, 3))).sum())
    assert x.grad.shape == (2, 3)
    with pytest.raises(DimensionError):
        T.transpose(Tensor(np.zeros((2, 2, 2))))


def test_concat_forward_and_grad():
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    b = Tensor([[3.0]], requires_grad=True)
    out = T.concat([a, b], axis=1)
    assert np.array_equal(out.data, [[1.0, 2.0, 3.0]])
    backward((out * Tensor([[10.0, 20.0, 30.0]])).sum())
    assert np.array_equal(a.grad, [[10.0, 20.0]])
    assert np.array_equal(b.grad, [[30.0]])


# -- finite differences --------------------------------------------------


def test_finite_diff_quadratic():
    theta = Tensor([1.0, 2.0], requires_grad=True)
    report = finite_diff_check(lambda: (theta * theta).sum(), [("theta", theta)], eps=1e-5)
    assert report.max_rel_err < 1e-8
    assert report.passed
    assert "PASS" in str(report)


def test_finite_diff_constant_function():
    theta = Tensor([1.0, 2.0], requires_grad=True)
    report = finite_diff_check(lambda: (theta * 0.0).sum(), [("theta", theta)])
    assert report.max_rel_err == 0.0


def test_finite_diff_rejects_nondeterministic_f():
    theta = Tensor([1.0], requires_grad=True)
    rng = np.random.default_rng(0)

    def f():
        return (theta * float(rng.normal())).sum()

    with pytest.raises(ContractError):
        finite_diff_check(f, [("theta", theta)])


def test_finite_diff_rejects_bad_eps():
    theta = Tensor([1.0], requires_grad=True)
    with pytest.raises(ContractError):
        finite_diff_check(lambda: theta.sum(), [("theta", theta)], eps=0.0)


def test_finite_diff_report_flags_wrong_gradient():
    # a deliberately wrong "gradient": perturb f after autodiff ran
    theta = Tensor([1.0, 2.0], requires_grad=True)
    report = finite_diff_check(
        lambda: (theta * theta * theta).sum(), [("theta", theta)], tol=1e-30
    )
    assert not report.passed
    assert "FAIL" in str(report)


def _fd_case(name):
    rng = np.random.default_rng(hash(name) % (2**32))

    def away_from_zero(shape):
        return Tensor(rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape),
                      requires_grad=True)

    if name == "add_broadcast":
        a, b = away_from_zero((2, 3)), away_from_zero((3,))
        return [("a", a), ("b", b)], lambda: ((a + b) * (a + b)).sum()
    if name == "mul_broadcast":
        a, b = away_from_zero((2, 3)), away_from_zero((2, 1))
        return [("a", a), ("b", b)], lambda: (a * b).sum()
    if name == "sub_neg_scale":
        a, b = away_from_zero((4,)), away_from_zero((4,))
        return [("a", a), ("b", b)], lambda: (T.scale(a - b, 3.0) * (-a)).sum()
    if name == "square_exp_log":
        a = Tensor(rng.uniform(0.5, 2.0, size=(3,)), requires_grad=True)
        return [("a", a)], lambda: (T.square(a) + T.exp(a) + T.log(a)).sum()
    if name == "matmul":
        a, b = away_from_zero((3, 4)), away_from_zero((4, 2))
        return [("a", a), ("b", b)], lambda: ((a @ b) * (a @ b)).sum()
    if name == "relu":
        a = away_from_zero((3, 3))  # entries bounded away from the kink
        return [("a", a)], lambda: (T.relu(a) * T.relu(a)).sum()
    if name == "sigmoid":
        a = away_from_zero((2, 4))
        return [("a", a)], lambda: T.square(T.sigmoid(a)).sum()
    if name == "softmax":
        a = away_from_zero((3, 4))
        w = Tensor(rng.normal(size=(3, 4)))
        return [("a", a)], lambda: (T.softmax(a, axis=-1) * w).sum()
    if name == "log_softmax":
        a = away_from_zero((3, 4))
        w = Tensor(rng.normal(size=(3, 4)))
        return [("a", a)], lambda: (T.log_softmax(a, axis=-1) * w).sum()
    if name == "mean_axis":
        a = away_from_zero((3, 5))
        return [("a", a)], lambda: T.square(a.mean(axis=1)).sum()
    if name == "sum_keepdims":
        a = away_from_zero((3, 5))
        return [("a", a)], lambda: (a * a.sum(axis=0, keepdims=True)).sum()
    if name == "conv2d":
        x = away_from_zero((2, 2, 5, 5))
        w = away_from_zero((3, 2, 3, 3))
        return [("x", x), ("w", w)], lambda: T.square(T.conv2d(x, w, stride=2, pad=1)).sum()
    if name == "global_avg_pool":
        x = away_from_zero((2, 3, 4, 4))
        return [("x", x)], lambda: T.square(T.global_avg_pool(x)).sum()
    if name == "concat_transpose":
        a, b = away_from_zero((2, 3)), away_from_zero((2, 2))
        return [("a", a), ("b", b)], lambda: T.square(T.concat([a, b], axis=1).T).sum()
    if name == "index_ops":
        x = away_from_zero((4, 6))
        idx = np.array([[1, 4], [0, 2], [5, 3], [2, 2]])
        out_idx = np.array([[0, 2], [1, 0], [2, 1], [0, 1]])
        return [("x", x)], lambda: T.square(
            T.put_per_row(T.take_per_row(x, idx), out_idx, width=3)
        ).sum()
    raise AssertionError(name)


@pytest.mark.parametrize(
    "case",
    [
        "add_broadcast", "mul_broadcast", "sub_neg_scale", "square_exp_log",
        "matmul", "relu", "sigmoid", "softmax", "log_softmax", "mean_axis",
        "sum_keepdims", "conv2d", "global_avg_pool", "concat_transpose", "index_ops",
    ],
)
def test_op_gradients_match_finite_differences(case):
    params, f = _fd_case(case)
    report = finite_diff_check(f, params, eps=1e-5, tol=1e-6)
    assert report.passed, str(report)


def test_finite_diff_sampled_coordinates():
    theta = Tensor(np.linspace(0.5, 2.0, 50), requires_grad=True)
    report = finite_diff_check(
        lambda: (theta * theta).sum(),
        [("theta", theta)],
        max_coords_per_param=10,
        rng=np.random.default_rng(5),
    )
    assert report.n_checked == 10
    assert report.passed


# -- property tests ------------------------------------------------------


@given(hnp.arrays(np.float64, (3, 5), elements=finite_floats(-1e3, 1e3)))
def test_softmax_rows_sum_to_one(x):
    sums = T.softmax(Tensor(x), axis=-1).data.sum(axis=-1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


@given(
    hnp.arrays(np.float64, (2, 4), elements=finite_floats(-1e3, 1e3)),
    finite_floats(-1e3, 1e3),
)
def test_softmax_shift_invariance(x, c):
    base = T.softmax(Tensor(x), axis=-1).data
    shifted = T.softmax(Tensor(x + c), axis=-1).data
    np.testing.assert_allclose(shifted, base, atol=1e-12)


@given(hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=4),
                  elements=finite_floats(-10.0, 10.0)))
def test_sum_of_leaves_grad_is_exactly_ones(x):
    t = Tensor(x, requires_grad=True)
    backward(t.sum())
    assert np.array_equal(t.grad, np.ones_like(x))


# magnitudes bounded away from zero: central differences drown in roundoff
# when the true gradient itself is ~eps-sized
well_scaled = finite_floats(-2.0, 2.0).filter(lambda v: abs(v) >= 0.1)


@given(
    hnp.arrays(np.float64, (2, 3), elements=well_scaled),
    hnp.arrays(np.float64, (3, 4), elements=well_scaled),
)
def test_composite_gradient_matches_finite_differences(theta_data, w_data):
    theta = Tensor(theta_data, requires_grad=True)
    w = Tensor(w_data, requires_grad=True)

    def f():
        logits = theta @ w
        return (T.log_softmax(logits, axis=-1) * T.sigmoid(logits)).mean()

    report = finite_diff_check(f, [("theta", theta), ("w", w)], eps=1e-5, tol=1e-6)
    assert report.passed, str(report)


# -- construction --------------------------------------------------------


def test_tensor_defaults_to_float64():
    assert Tensor([1, 2, 3]).dtype == np.float64
    assert Tensor([1.0], dtype=np.float32).dtype == np.float32


def test_item_requires_scalar():
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()
