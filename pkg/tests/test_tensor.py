import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cslrobust import tensor as T
from cslrobust.errors import ContractError, DegenerateInputError, DimensionError, DomainError
from cslrobust.tensor import Tensor

from conftest import grad_check

finite = st.floats(-5, 5, allow_nan=False)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_basis_selection(self):
        out = T.matmul(Tensor([[1.0, 0.0], [0.0, 0.0]]), Tensor([[5.0], [7.0]]))
        np.testing.assert_array_equal(out.data, [[5], [0]])

    def test_against_triple_loop(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=0, atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradients_reach_both_parents(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        assert grad_check(lambda: T.sum(T.mul(T.matmul(a, b), T.matmul(a, b))), [a, b], rng) < 1e-5


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_relu_subgradient_at_zero_is_zero(self):
        x = Tensor([0.0, 1.0], requires_grad=True)
        T.backward(T.sum(T.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_exp_zero(self):
        assert T.exp(Tensor([0.0])).data[0] == 1.0

    @given(arrays(np.float64, 7, elements=finite))
    def test_log_exp_round_trip(self, x):
        np.testing.assert_allclose(T.log(T.exp(Tensor(x))).data, x, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_log_domain(self, bad):
        with pytest.raises(DomainError):
            T.log(Tensor([1.0, bad]))

    def test_dispatch_names(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        assert T.elementwise("add", a, b).data.tolist() == [4, 7]
        assert T.elementwise("sub", a, b).data.tolist() == [-2, -3]
        assert T.elementwise("mul", a, b).data.tolist() == [3, 10]
        assert T.elementwise("scale", a, 3.0).data.tolist() == [3, 6]
        assert T.elementwise("neg", a).data.tolist() == [-1, -2]

    def test_scalar_broadcast_only(self):
        assert T.add(Tensor([[1.0, 2.0]]), Tensor(1.0)).data.tolist() == [[2, 3]]
        with pytest.raises(DimensionError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_primitive_gradients(self, rng):
        x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
        y = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        s = Tensor(1.7, requires_grad=True)

        def loss():
            z = T.add(T.mul(T.exp(T.scale(y, 0.3)), T.log(x)), T.relu(T.sub(y, T.neg(x))))
            return T.mean(T.mul(z, s))

        assert grad_check(loss, [x, y, s], rng) < 1e-5


class TestReduce:
    def test_sum(self):
        assert T.sum(Tensor([1.0, 2.0, 3.0])).item() == 6.0

    def test_mean_axis0(self):
        np.testing.assert_array_equal(T.mean(Tensor([[1.0, 3.0], [5.0, 7.0]]), axis=0).data, [3, 5])

    @given(arrays(np.float64, (3, 5), elements=finite), st.sampled_from([None, 0, 1]))
    def test_sum_is_mean_times_count(self, x, axis):
        count = x.size if axis is None else x.shape[axis]
        np.testing.assert_allclose(T.reduce("sum", Tensor(x), axis).data,
                                   T.reduce("mean", Tensor(x), axis).data * count, atol=1e-12)

    def test_axis_out_of_range(self):
        with pytest.raises(DimensionError):
            T.sum(Tensor(np.ones((2, 2))), axis=2)

    def test_gradient_broadcast(self, rng):
        x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        assert grad_check(lambda: T.sum(T.mul(T.mean(x, axis=0), T.sum(x, axis=0))), [x], rng) < 1e-5


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(T.l2_normalize(Tensor([[3.0, 4.0]])).data, [[0.6, 0.8]], atol=1e-15)

    def test_unit_vector_fixed(self):
        np.testing.assert_array_equal(T.l2_normalize(Tensor([[0.0, 1.0]])).data, [[0.0, 1.0]])

    def test_zero_row_raises(self):
        with pytest.raises(DegenerateInputError):
            T.l2_normalize(Tensor([[1.0, 1.0], [0.0, 0.0]]))

    @given(arrays(np.float64, (4, 3), elements=st.floats(-100, 100)).filter(
        lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)))
    def test_rows_unit_norm(self, x):
        out = T.l2_normalize(Tensor(x)).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)

    def test_quotient_rule_gradient(self, rng):
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 4)))
        assert grad_check(lambda: T.sum(T.mul(T.l2_normalize(x), w)), [x], rng) < 1e-5


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.zeros((2, 3)), requires_grad=True)
        T.backward(T.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        T.backward(T.sum(T.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, -4.0])

    def test_accumulates_until_reset(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        T.backward(T.sum(x))
        T.backward(T.sum(x))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])
        T.zero_grad([x])
        assert x.grad is None or not np.any(x.grad)

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.backward(T.mul(x, x))

    def test_tape_is_topological_and_unique(self, rng):
        x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        h = T.relu(T.matmul(x, x))
        loss = T.sum(T.add(h, h))
        order = T.tape(loss)
        assert len(order) == len({id(n) for n in order})
        pos = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for parent in node._parents:
                assert pos[id(parent)] < pos[id(node)]

    def test_shared_subexpression(self):
        x = Tensor([3.0], requires_grad=True)
        y = T.mul(x, x)
        T.backward(T.sum(T.add(y, y)))
        assert x.grad[0] == 12.0

    def test_mlp_composite(self, rng):
        x = Tensor(rng.normal(size=(6, 5)))
        w1 = Tensor(rng.normal(size=(5, 16)) * 0.4, requires_grad=True)
        b1 = Tensor(rng.normal(size=16) * 0.1, requires_grad=True)
        w2 = Tensor(rng.normal(size=(16, 3)) * 0.4, requires_grad=True)

        def loss():
            h = T.relu(T.add_rowvec(T.matmul(x, w1), b1))
            return T.mean(T.mul(T.matmul(h, w2), T.matmul(h, w2)))

        assert grad_check(loss, [w1, b1, w2], rng) < 1e-5

    def test_deterministic(self, rng):
        a = rng.normal(size=(4, 4))

        def run():
            x = Tensor(a, requires_grad=True)
            loss = T.sum(T.log_softmax(T.matmul(x, x)))
            T.backward(loss)
            return loss.item(), x.grad.tobytes()

        assert run() == run()


class TestStructural:
    def test_structural_op_gradients(self, rng):
        a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        v = Tensor(rng.normal(size=3), requires_grad=True)

        def loss():
            c = T.concat([a, b])
            r = T.take_rows(T.add_rowvec(c, v), np.array([0, 5, 5, 2]))
            s = T.reshape(T.transpose(r), (2, 6))
            return T.sum(T.mul(s, s))

        assert grad_check(loss, [a, b, v], rng) < 1e-5

    def test_log_softmax_matches_scipy(self, rng):
        from scipy.special import log_softmax
        x = rng.normal(size=(5, 7)) * 30
        np.testing.assert_allclose(T.log_softmax(Tensor(x)).data, log_softmax(x, axis=1), atol=1e-12)

    def test_log_softmax_gradient(self, rng):
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 6)))
        assert grad_check(lambda: T.sum(T.mul(T.log_softmax(x), w)), [x], rng) < 1e-5


class TestConv:
    def test_conv2d_matches_scipy_correlate(self, rng):
        from scipy.signal import correlate
        x = rng.normal(size=(2, 3, 6, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for n in range(2):
            for o in range(4):
                ref = correlate(xp[n], w[o], mode="valid")[0] + b[o]
                np.testing.assert_allclose(out[n, o], ref, atol=1e-12)

    def test_avg_pool(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(T.avg_pool2d(Tensor(x)).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_conv_pool_gradients(self, rng):
        x = Tensor(rng.normal(size=(2, 2, 4, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.3, requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)

        def loss():
            y = T.avg_pool2d(T.relu(T.conv2d(x, w, b)))
            return T.sum(T.mul(y, y))

        assert grad_check(loss, [x, w, b], rng) < 1e-5


class TestFiniteDifference:
    def test_sum(self, rng):
        x = Tensor(rng.normal(size=(3, 2)))
        np.testing.assert_allclose(T.finite_difference_grad(T.sum, x), np.ones((3, 2)), atol=1e-9)

    def test_square_at_three(self):
        g = T.finite_difference_grad(lambda t: T.sum(T.mul(t, t)), Tensor([3.0]), h=1e-5)
        assert abs(g[0] - 6.0) < 1e-8

    def test_agrees_with_backward_on_quadratic_forms(self, rng):
        a = rng.normal(size=(5, 5))
        x = Tensor(rng.normal(size=(1, 5)), requires_grad=True)
        f = lambda t: T.sum(T.mul(T.matmul(t, Tensor(a)), t))
        T.backward(f(x))
        np.testing.assert_allclose(T.finite_difference_grad(f, x), x.grad, atol=1e-6)

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ContractError):
            T.finite_difference_grad(T.sum, Tensor([1.0]), h=0.0)


class TestSerialization:
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
                  elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
    def test_csv_round_trip_bit_exact(self, tmp_path_factory, x):
        path = tmp_path_factory.mktemp("t") / "x.csv"
        T.save_csv(Tensor(x), path)
        back = T.load_csv(path)
        assert back.shape == x.shape
        assert back.data.tobytes() == x.tobytes()

    def test_shape_invariant(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert math.prod(t.shape) == t.data.size
