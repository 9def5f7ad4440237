import math
import unittest

import numpy as np

from pyradet import tensor as T
from pyradet.tensor import Tensor


def conv2d_oracle(x, w, b, stride, padding):
    """Direct nested-loop cross-correlation."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b_i in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    total = b[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                total += xp[b_i, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[b_i, o, i, j] = total
    return out


class TestConvolutions(unittest.TestCase):
    """conv2d / conv_transpose2d values, shapes and adjointness"""

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_all_ones_center(self):
        out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]), 1, 1)
        self.assertEqual(out.shape, (1, 1, 3, 3))
        self.assertEqual(out.data[0, 0, 1, 1], 9.0)
        self.assertEqual(out.data[0, 0, 0, 0], 4.0)

    def test_identity_kernel(self):
        x = self.rng.normal(size=(2, 1, 6, 5))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = T.conv2d(Tensor(x), Tensor(w), Tensor([0.0]), 1, 1)
        np.testing.assert_array_equal(out.data, x)

    def test_matches_nested_loop_oracle(self):
        x = self.rng.normal(size=(1, 2, 5, 5))
        w = self.rng.normal(size=(3, 2, 3, 3))
        b = self.rng.normal(size=3)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), 2, 1)
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, b, 2, 1), rtol=0, atol=1e-12)

    def test_channel_mismatch_names_axis(self):
        with self.assertRaisesRegex(ValueError, 'channel axis'):
            T.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))), Tensor([0.0]))

    def test_even_kernel_rejected(self):
        with self.assertRaises(ValueError):
            T.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))

    def test_transpose_single_pixel_upsample(self):
        out = T.conv_transpose2d(Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor(np.ones((1, 1, 2, 2))),
                                 Tensor([0.0]), 2, 0)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 3.0))

    def test_transpose_doubles_spatial_size(self):
        out = T.conv_transpose2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((2, 3, 4, 4))),
                                 Tensor(np.zeros(3)), 2, 1)
        self.assertEqual(out.shape, (1, 3, 8, 8))

    def test_transpose_rejects_stride_three(self):
        with self.assertRaises(ValueError):
            T.conv_transpose2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]), 3)

    def test_adjoint_identity(self):
        for stride, padding in [(1, 1), (2, 1), (2, 0), (1, 0)]:
            x = self.rng.normal(size=(2, 3, 7, 6))
            w = self.rng.normal(size=(4, 3, 3, 3))
            zero_out, zero_in = Tensor(np.zeros(4)), Tensor(np.zeros(3))
            cx = T.conv2d(Tensor(x), Tensor(w), zero_out, stride, padding)
            y = self.rng.normal(size=cx.shape)
            ty = T.conv_transpose2d(Tensor(y), Tensor(w), zero_in, stride, padding)
            # transposed output may be shorter when the forward stride dropped trailing rows
            ty_full = np.zeros_like(x)
            ty_full[:, :, :ty.shape[2], :ty.shape[3]] = ty.data
            lhs = float(np.sum(cx.data * y))
            rhs = float(np.sum(x * ty_full))
            self.assertAlmostEqual(lhs, rhs, delta=1e-10 * max(1.0, abs(lhs)))


class TestMatmulSoftmax(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_identity_b(self):
        a = self.rng.normal(size=(2, 3, 3))
        out = T.batched_matmul(Tensor(a), Tensor(np.stack([np.eye(3)] * 2)))
        np.testing.assert_allclose(out.data, a, atol=1e-15)

    def test_triple_loop_oracle(self):
        a = self.rng.normal(size=(2, 3, 3))
        b = self.rng.normal(size=(2, 3, 3))
        expected = np.zeros((2, 3, 3))
        for c in range(2):
            for i in range(3):
                for j in range(3):
                    expected[c, i, j] = sum(a[c, i, k] * b[c, k, j] for k in range(3))
        out = T.batched_matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_zeros(self):
        out = T.batched_matmul(Tensor(np.zeros((2, 2, 3))), Tensor(self.rng.normal(size=(2, 3, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2, 4)))

    def test_inner_mismatch(self):
        with self.assertRaisesRegex(ValueError, 'inner axis'):
            T.batched_matmul(Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros((2, 4, 4))))

    def test_softmax_uniform(self):
        out = T.softmax_lastdim(Tensor(np.full((2, 4), 1.7)))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-15)

    def test_softmax_closed_form(self):
        out = T.softmax_lastdim(Tensor([0.0, math.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_softmax_shift_invariance_and_rows_sum_to_one(self):
        x = self.rng.normal(size=(3, 5, 7))
        base = T.softmax_lastdim(Tensor(x)).data
        shifted = T.softmax_lastdim(Tensor(x + 123.0)).data
        np.testing.assert_allclose(base, shifted, atol=1e-12)
        np.testing.assert_allclose(base.sum(axis=-1), 1.0, atol=1e-9)


class TestNormalisation(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(2)

    def test_layernorm_moments(self):
        x = self.rng.normal(3.0, 2.0, size=(2, 6, 3, 3))
        out = T.layernorm_channels(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6)), eps=1e-12).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-9)

    def test_layernorm_constant_channels(self):
        out = T.layernorm_channels(Tensor(np.full((1, 4, 2, 2), 5.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4, 2, 2)))

    def test_layernorm_scalar_oracle(self):
        x = self.rng.normal(size=(1, 4, 2, 2))
        gamma, beta = self.rng.normal(size=4), self.rng.normal(size=4)
        out = T.layernorm_channels(Tensor(x), Tensor(gamma), Tensor(beta), eps=1e-5).data
        for i in range(2):
            for j in range(2):
                values = [x[0, c, i, j] for c in range(4)]
                mean = sum(values) / 4
                var = sum((v - mean) ** 2 for v in values) / 4
                for c in range(4):
                    expected = gamma[c] * (values[c] - mean) / math.sqrt(var + 1e-5) + beta[c]
                    self.assertAlmostEqual(out[0, c, i, j], expected, delta=1e-10)

    def test_prelu(self):
        np.testing.assert_array_equal(T.prelu(Tensor([-1.0, 2.0]), Tensor([0.0])).data, [0.0, 2.0])
        np.testing.assert_array_equal(T.prelu(Tensor([-1.0, 2.0]), Tensor([1.0])).data, [-1.0, 2.0])
        self.assertEqual(T.prelu(Tensor([-4.0]), Tensor([0.25])).data[0], -1.0)

    def test_prelu_per_channel(self):
        x = np.full((1, 2, 1, 1), -2.0)
        out = T.prelu(Tensor(x), Tensor([0.5, 0.1])).data
        np.testing.assert_allclose(out.reshape(-1), [-1.0, -0.2])

    def test_batchnorm_training_statistics(self):
        x = self.rng.normal(5.0, 2.0, size=(8, 2, 4, 4))
        state = T.BatchNormState.create(2)
        out = T.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)
        self.assertEqual(state.num_batches, 1)
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))

    def test_batchnorm_eval_identity(self):
        x = self.rng.normal(size=(1, 3, 2, 2))
        state = T.BatchNormState.create(3)
        out = T.batchnorm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), state, training=False, eps=0.0)
        np.testing.assert_allclose(out.data, x, atol=1e-15)

    def test_batchnorm_needs_two_values(self):
        state = T.BatchNormState.create(1)
        with self.assertRaises(ValueError):
            T.batchnorm2d(Tensor(np.ones((1, 1, 1, 1))), Tensor([1.0]), Tensor([0.0]), state, training=True)

    def test_batchnorm_gradient(self):
        rng = self.rng
        gamma, beta = rng.normal(size=3), rng.normal(size=3)
        weights = rng.normal(size=(2, 3, 4, 4))

        def f(x):
            state = T.BatchNormState.create(3)
            out = T.batchnorm2d(x, Tensor(gamma), Tensor(beta), state, training=True)
            return (out * weights).sum()

        self.assertLess(T.grad_check(f, rng.normal(size=(2, 3, 4, 4))), 1e-5)


class TestAutograd(unittest.TestCase):

    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        T.backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_gradient(self):
        values = np.array([[1.0, -2.0], [0.5, 3.0]])
        x = Tensor(values, requires_grad=True)
        T.backward((x * x).sum())
        np.testing.assert_array_equal(x.grad, 2 * values)

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(ValueError):
            T.backward(x * 2.0)

    def test_graph_is_consumed(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * x).sum()
        T.backward(loss)
        with self.assertRaises(RuntimeError):
            T.backward(loss)

    def test_shared_subexpression_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * 3.0
        T.backward((y * y + y).sum())
        # d/dx (9x^2 + 3x) = 18x + 3
        self.assertAlmostEqual(x.grad[0], 39.0)

    def test_broadcast_gradient(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((1, 3)), requires_grad=True)
        T.backward((x * b).sum())
        np.testing.assert_array_equal(b.grad, np.full((1, 3), 2.0))

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with T.no_grad():
            y = (x * 2.0).sum()
        self.assertFalse(y.requires_grad)

    def test_debug_mode_raises_on_nan(self):
        T.set_debug(True)
        try:
            with self.assertRaises(FloatingPointError):
                Tensor([-1.0]).log()
        finally:
            T.set_debug(False)

    def test_grad_check_sum_of_squares(self):
        error = T.grad_check(lambda x: (x * x).sum(), np.random.default_rng(3).normal(size=(3, 4)))
        self.assertLess(error, 1e-9)

    def test_grad_check_conv_layer(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(2, 2, 3, 3))
        b = rng.normal(size=2)
        target = rng.normal(size=(1, 2, 3, 3))

        def f(x):
            out = T.conv2d(x, Tensor(w), Tensor(b), 2, 1)
            return ((out - target) * (out - target)).sum()

        self.assertLess(T.grad_check(f, rng.normal(size=(1, 2, 5, 5))), 1e-5)

    def test_grad_check_attention_ops(self):
        rng = np.random.default_rng(5)
        b = rng.normal(size=(2, 3, 4))
        weights = rng.normal(size=(2, 3, 4))

        def f(a):
            return (T.softmax_lastdim(T.batched_matmul(a, Tensor(b))) * weights).sum()

        self.assertLess(T.grad_check(f, rng.normal(size=(2, 3, 3))), 1e-6)


class TestAdam(unittest.TestCase):

    def test_first_step_is_lr_times_sign(self):
        p = Tensor([1.0, -2.0, 0.5], requires_grad=True)
        state = T.AdamState.create([p])
        T.adam_step([p], [np.array([0.3, -5.0, 2.0])], state, lr=0.01)
        np.testing.assert_allclose(p.data, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], atol=1e-9)
        self.assertEqual(state.step, 1)

    def test_zero_gradient_leaves_parameters(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        T.adam_step([p], [np.zeros(2)], T.AdamState.create([p]), lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_two_step_hand_trace(self):
        p = Tensor([0.0], requires_grad=True)
        state = T.AdamState.create([p])
        lr, g = 0.1, 2.0
        T.adam_step([p], [np.array([g])], state, lr)
        T.adam_step([p], [np.array([g])], state, lr)
        # both steps see m_hat = g and v_hat = g^2
        m2 = 0.9 * 0.1 * g + 0.1 * g
        v2 = 0.999 * 0.001 * g * g + 0.001 * g * g
        second = lr * (m2 / (1 - 0.9 ** 2)) / (math.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
        first = lr * g / (abs(g) + 1e-8)
        self.assertAlmostEqual(p.data[0], -(first + second), places=12)

    def test_shape_mismatch(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(ValueError):
            T.adam_step([p], [np.zeros(3)], T.AdamState.create([p]), lr=0.1)

    def test_optimizer_object(self):
        p = Tensor([1.0], requires_grad=True)
        opt = T.Adam({'p': p}, lr=0.5)
        T.backward((p * p).sum())
        opt.step()
        self.assertAlmostEqual(p.data[0], 0.5, places=6)
        opt.zero_grad()
        self.assertIsNone(p.grad)


if __name__ == '__main__':
    unittest.main()
