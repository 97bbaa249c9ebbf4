import numpy as np
import pytest

from simac import tensor as T
from simac.gradcheck import PRIMITIVES, check_function, check_gradients
from simac.tensor import NumericFault, ShapeError, Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


@pytest.mark.parametrize("op", sorted(PRIMITIVES))
def test_primitive_gradients(op):
    for seed in range(3):
        rep = check_gradients(op, seed=seed)
        assert rep.passed, f"{op} seed {seed}: {rep.max_rel_error:.2e}"
        assert rep.probe_count == 10


def test_unknown_primitive_is_rejected():
    with pytest.raises(KeyError):
        check_gradients("no_such_op")


def test_gradcheck_catches_a_wrong_backward():
    a = leaf(np.linspace(-1, 1, 6))
    wrong = lambda: T._make(a.data**2, (a,), lambda g: (g * a.data,), "bad_square")  # noqa: E731
    assert not check_function("bad_square", wrong, [a], seed=0).passed


def test_straight_through_forward_value_backward_identity():
    a = leaf([[0.3, -0.7], [0.1, 0.9]])
    y = T.straight_through(a, np.round(a.data))
    np.testing.assert_array_equal(y.data, np.round(a.data))
    y.backward(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(a.grad, [[1.0, 2.0], [3.0, 4.0]])


def test_straight_through_shape_check():
    with pytest.raises(ShapeError):
        T.straight_through(leaf([1.0, 2.0]), np.zeros(3))


def test_gradient_accumulates_over_shared_use():
    a = leaf([1.0, 2.0, 3.0])
    y = T.sum_(T.add(T.mul(a, a), a))
    y.backward()
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)


def test_no_grad_builds_no_graph():
    a = leaf([1.0, 2.0])
    with T.no_grad():
        y = T.mul(a, a)
    assert not y.requires_grad and y._parents == ()


def test_trailing_broadcast_only():
    a = leaf(np.ones((2, 3)))
    T.add(a, leaf(np.ones(3)))
    with pytest.raises(ShapeError):
        T.add(a, leaf(np.ones(2)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(leaf(np.ones((2, 3))), leaf(np.ones((4, 2))))


def test_non_finite_output_is_a_numeric_fault():
    with np.errstate(over="ignore"), pytest.raises(NumericFault, match="mul"):
        T.mul(leaf([1e200]), leaf([1e200]))


def test_softmax_rows_sum_to_one_and_mask_is_exact():
    x = leaf(np.random.default_rng(0).standard_normal((3, 5)) * 50)
    mask = np.array([True, False, True, True, False])
    y = T.softmax(x, mask=mask)
    np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(y.data[:, ~mask] == 0.0)


def test_softmax_fully_masked_row_fails():
    with pytest.raises(ShapeError):
        T.softmax(leaf(np.zeros((1, 3))), mask=np.zeros(3, bool))


def test_layernorm_zero_input_is_zero():
    y = T.layernorm(leaf(np.zeros((2, 4))), leaf(np.ones(4)), leaf(np.zeros(4)))
    assert np.all(y.data == 0.0)


def test_max_pool_ties_go_to_lowest_index():
    a = leaf([[2.0, 2.0, 1.0, 5.0]])
    y = T.max_pool(a, 2)
    y.backward(np.ones((1, 2)))
    np.testing.assert_array_equal(a.grad, [[1.0, 0.0, 0.0, 1.0]])


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(1)
    x, w = rng.standard_normal((2, 3, 9)), rng.standard_normal((4, 3, 3))
    y = T.conv1d(Tensor(x), Tensor(w)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    ref = np.zeros((2, 4, 9))
    for b in range(2):
        for o in range(4):
            for t in range(9):
                ref[b, o, t] = np.sum(xp[b, :, t : t + 3] * w[o])
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(2)
    x, w = rng.standard_normal((1, 2, 4, 5)), rng.standard_normal((3, 2, 3, 3))
    y = T.conv2d(Tensor(x), Tensor(w)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 4, 5))
    for o in range(3):
        for i in range(4):
            for j in range(5):
                ref[0, o, i, j] = np.sum(xp[0, :, i : i + 3, j : j + 3] * w[o])
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_take_gathers_and_scatters():
    a = leaf(np.arange(12.0).reshape(4, 3))
    y = T.take(a, np.array([3, 3, 0]), axis=0)
    np.testing.assert_array_equal(y.data, a.data[[3, 3, 0]])
    y.backward(np.ones((3, 3)))
    np.testing.assert_array_equal(a.grad[:, 0], [1.0, 0.0, 0.0, 2.0])


def test_take_out_of_range():
    with pytest.raises(ShapeError):
        T.take(leaf(np.ones((2, 2))), np.array([2]))
