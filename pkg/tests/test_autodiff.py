"""Reverse-mode autodiff engine: primitive gradients, higher-order
differentiation, Jacobians, and the finite-difference oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from senn import autodiff as ad
from senn.autodiff import Tensor
from senn.nn import MLP, softmax_cross_entropy


def tensors(shape, lo=-2.0, hi=2.0):
    return st.builds(
        lambda seed: Tensor(np.random.default_rng(seed).uniform(lo, hi, shape),
                            requires_grad=True),
        st.integers(0, 10_000))


class TestPrimitives:
    def test_matmul_value(self):
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert np.array_equal(out.data, [[3.0], [7.0]])

    def test_relu_value(self):
        assert np.array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_softmax_uniform(self):
        out = ad.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    @pytest.mark.parametrize("fn", [
        lambda t: (t * t).sum(),
        lambda t: ad.tanh(t).sum(),
        lambda t: ad.sigmoid(t).sum(),
        lambda t: ad.exp(t).sum(),
        lambda t: ad.log(ad.add(ad.mul(t, t), 1.0)).sum(),
        lambda t: ad.sqrt(ad.add(ad.mul(t, t), 0.5)).sum(),
        lambda t: ad.logsumexp(t, axis=0),
        lambda t: ad.tensor_mean(ad.softmax(t, axis=0) * t),
        lambda t: ad.norm_sq(t),
        lambda t: ad.absolute(ad.add(t, 5.0)).sum(),  # away from the kink
        lambda t: ad.div(t, ad.add(ad.mul(t, t), 2.0)).sum(),
    ])
    def test_primitive_gradients_match_finite_differences(self, fn):
        point = Tensor(np.random.default_rng(7).uniform(-2, 2, 5))
        assert ad.finite_difference_check(fn, point) < 1e-6

    def test_matmul_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        b = Tensor(rng.uniform(-2, 2, (4, 3)))
        fn = lambda a: ad.tensor_sum(ad.mul(ad.matmul(a, b), ad.matmul(a, b)))
        assert ad.finite_difference_check(fn, Tensor(rng.uniform(-2, 2, (2, 4)))) < 1e-6

    def test_broadcast_gradient(self):
        fn = lambda a: ad.tensor_sum(ad.mul(ad.add(a, Tensor(np.ones((3, 4)))), 2.0))
        assert ad.finite_difference_check(fn, Tensor(np.random.default_rng(1).uniform(-1, 1, 4))) < 1e-6

    def test_bmatmul_permute_gradients(self):
        rng = np.random.default_rng(5)
        b = Tensor(rng.uniform(-1, 1, (2, 4, 3)))

        def fn(a):
            prod = ad.bmatmul(ad.permute(a, (0, 2, 1)), b)
            return ad.norm_sq(prod)

        assert ad.finite_difference_check(fn, Tensor(rng.uniform(-1, 1, (2, 4, 5)))) < 1e-6

    def test_concat_slice_embed_gradients(self):
        rng = np.random.default_rng(6)

        def fn(a):
            c = ad.concat([a, ad.mul(a, 2.0)], axis=0)
            return ad.norm_sq(c[1:4])

        assert ad.finite_difference_check(fn, Tensor(rng.uniform(-1, 1, 3))) < 1e-6


class TestGrad:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        with ad.Tape():
            assert ad.grad(ad.mul(x, x), x).data == pytest.approx(6.0)

    def test_second_derivative_of_cube(self):
        x = Tensor(2.0, requires_grad=True)
        with ad.Tape():
            y = ad.mul(ad.mul(x, x), x)
            g = ad.grad(y, x, create_graph=True)
            gg = ad.grad(g, x)
        assert gg.data == pytest.approx(12.0)

    def test_gradient_wrt_matrix(self):
        w = Tensor(np.eye(2), requires_grad=True)
        x = Tensor([1.0, 2.0])
        with ad.Tape():
            y = ad.norm_sq(ad.matmul(w, x))
            g = ad.grad(y, w)
        np.testing.assert_allclose(g.data, [[2.0, 4.0], [4.0, 8.0]], atol=1e-12)

    def test_non_scalar_output_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.Tape():
            with pytest.raises(ValueError, match="scalar"):
                ad.grad(ad.mul(x, 2.0), x)

    def test_unreachable_wrt_gets_zeros(self):
        x = Tensor(np.ones(3), requires_grad=True)
        z = Tensor(np.ones(2), requires_grad=True)
        with ad.Tape():
            g = ad.grad(ad.norm_sq(x), z)
        assert np.array_equal(g.data, np.zeros(2))

    @settings(max_examples=25, deadline=None)
    @given(t=tensors((4,)), a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_linearity(self, t, a, b):
        f = lambda u: ad.norm_sq(u)
        g = lambda u: ad.tensor_sum(ad.tanh(u))
        with ad.Tape():
            combined = ad.grad(ad.add(ad.mul(f(t), a), ad.mul(g(t), b)), t).data
        with ad.Tape():
            parts = a * ad.grad(f(t), t).data + b * ad.grad(g(t), t).data
        np.testing.assert_allclose(combined, parts, atol=1e-12)

    def test_deterministic_replay(self):
        def run():
            rng = np.random.default_rng(42)
            mlp = MLP([3, 4, 2], activation="tanh", rng=rng)
            x = Tensor(rng.uniform(-1, 1, (2, 3)))
            with ad.Tape():
                loss = softmax_cross_entropy(mlp(x), [0, 1])
                return [g.data.copy() for g in ad.grad(loss, mlp.parameters())]

        for g1, g2 in zip(run(), run()):
            assert np.array_equal(g1, g2)


class TestJacobian:
    def test_identity(self):
        x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
        with ad.Tape():
            jac = ad.jacobian(lambda t: t, x)
        np.testing.assert_allclose(jac.data, np.eye(3), atol=1e-15)

    def test_linear_map(self):
        a = np.array([[1.0, 2.0], [0.0, 1.0]])
        x = Tensor(np.array([0.5, -0.5]), requires_grad=True)
        with ad.Tape():
            jac = ad.jacobian(lambda t: ad.matmul(Tensor(a), t), x)
        np.testing.assert_allclose(jac.data, a, atol=1e-15)

    def test_analytic_nonlinear(self):
        x = Tensor(np.array([1.0, 3.0]), requires_grad=True)

        def f(t):
            return ad.concat([ad.reshape(ad.mul(t[0], t[0]), (1,)),
                              ad.reshape(ad.mul(t[0], t[1]), (1,))], axis=0)

        with ad.Tape():
            jac = ad.jacobian(f, x)
        np.testing.assert_allclose(jac.data, [[2.0, 0.0], [3.0, 1.0]], atol=1e-12)


class TestFiniteDifferenceCheck:
    def test_sum_of_squares(self):
        point = Tensor(np.array([1.0, 2.0, 3.0]))
        assert ad.finite_difference_check(lambda t: ad.norm_sq(t), point) < 1e-6

    def test_mlp_cross_entropy(self):
        rng = np.random.default_rng(0)
        mlp = MLP([4, 6, 3], activation="tanh", rng=rng)
        point = Tensor(rng.uniform(-1, 1, 4))
        fn = lambda t: softmax_cross_entropy(mlp(ad.reshape(t, (1, 4))), 1)
        assert ad.finite_difference_check(fn, point) < 1e-4

    def test_double_backprop_path(self):
        """fn that internally differentiates is still checkable: the outer
        quantity is a gradient norm, so the check exercises grad-of-grad."""
        rng = np.random.default_rng(1)
        mlp = MLP([3, 4, 1], activation="tanh", rng=rng)

        def fn(t):
            u = Tensor(t.data, requires_grad=True)
            out = ad.tensor_sum(mlp(ad.reshape(u, (1, 3))))
            g = ad.grad(out, u, create_graph=True)
            return ad.norm_sq(g)

        # parameters enter through mlp; differentiate w.r.t. a weight
        layer = mlp.layers[0]

        def fn_w(q):
            layer.weight = q
            x = Tensor(np.array([0.2, -0.4, 0.9]), requires_grad=True)
            out = ad.tensor_sum(mlp(ad.reshape(x, (1, 3))))
            g = ad.grad(out, x, create_graph=True)
            return ad.norm_sq(g)

        assert ad.finite_difference_check(fn_w, layer.weight) < 1e-4


class TestTensor:
    def test_detach_leaves_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.Tape():
            y = ad.mul(x, 2.0)
            d = y.detach()
        assert d.node is None and not d.requires_grad
        assert np.array_equal(d.data, y.data)

    def test_item_on_non_scalar_raises(self):
        with pytest.raises(ValueError, match="non-scalar"):
            Tensor(np.ones(3)).item()

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with ad.Tape():
            with ad.no_grad():
                y = ad.mul(x, x)
        assert y.node is None
