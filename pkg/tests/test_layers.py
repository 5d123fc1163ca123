"""
Тесты для модуля layers
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# Добавляем путь к модулям
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from seaice_workbench.errors import ModelError, ShapeMismatchError
from seaice_workbench.gradcheck import finite_difference_check, input_gradient_check
from seaice_workbench.layers import (
    Conv2D,
    Dropout,
    ReLU,
    Sequential,
    Sigmoid,
    Tensor4,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    split_channels,
)
from seaice_workbench.losses import MSE
from seaice_workbench.models import DenseBlock


def conv_reference(x, weights, bias):
    """Прямая кросс-корреляция циклами"""
    n, h, w, c_in = x.shape
    k = weights.shape[0]
    pad = k // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((n, h, w, weights.shape[3]))
    for r in range(h):
        for c in range(w):
            window = padded[:, r:r + k, c:c + k, :]
            out[:, r, c, :] = np.tensordot(window, weights, axes=([1, 2, 3], [0, 1, 2])) + bias
    return out


def random_label(rng, shape):
    return np.concatenate([rng.random(shape + (1,)), rng.uniform(0.0, 0.9, size=shape + (1,))], axis=-1)


class TestConvolution(unittest.TestCase):
    """Тесты свёртки"""

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.random((2, 5, 6, 3))
        weights = np.zeros((1, 1, 3, 3))
        weights[0, 0] = np.eye(3)
        out, _ = conv2d_forward(x, weights, np.zeros(3))
        np.testing.assert_array_equal(out, x)

    def test_ones_kernel_on_constant(self):
        x = np.full((1, 6, 6, 1), 0.7)
        out, _ = conv2d_forward(x, np.ones((3, 3, 1, 1)), np.zeros(1))
        np.testing.assert_allclose(out[0, 1:-1, 1:-1, 0], 9 * 0.7)
        self.assertAlmostEqual(out[0, 0, 0, 0], 4 * 0.7)

    def test_matches_reference(self):
        rng = np.random.default_rng(1)
        for k in (1, 3, 5):
            x = rng.standard_normal((2, 7, 5, 3))
            weights = rng.standard_normal((k, k, 3, 4))
            bias = rng.standard_normal(4)
            out, _ = conv2d_forward(x, weights, bias)
            np.testing.assert_allclose(out, conv_reference(x, weights, bias), atol=1e-12)

    def test_zero_upstream_gradient(self):
        rng = np.random.default_rng(2)
        x = rng.random((1, 4, 4, 2))
        out, cache = conv2d_forward(x, rng.random((3, 3, 2, 3)), np.zeros(3))
        gx, gw, gb = conv2d_backward(np.zeros_like(out), cache)
        self.assertFalse(gx.any() or gw.any() or gb.any())

    def test_shape_errors(self):
        x = np.zeros((1, 4, 4, 2))
        with self.assertRaises(ShapeMismatchError):
            conv2d_forward(x, np.zeros((3, 3, 3, 1)), np.zeros(1))
        with self.assertRaises(ShapeMismatchError):
            conv2d_forward(x, np.zeros((2, 2, 2, 1)), np.zeros(1))
        with self.assertRaises(ShapeMismatchError):
            conv2d_forward(x, np.zeros((3, 3, 2, 1)), np.zeros(2))
        _, cache = conv2d_forward(x, np.zeros((3, 3, 2, 1)), np.zeros(1))
        with self.assertRaises(ShapeMismatchError):
            conv2d_backward(np.zeros((1, 4, 4, 2)), cache)

    def test_conv_gradients(self):
        """Градиенты свёртки по весам и входу совпадают с конечными разностями"""
        rng = np.random.default_rng(3)
        for k in (1, 3, 5):
            layer = Conv2D(2, 1, k, f"c{k}")
            layer.initialize(rng)
            layer.bias.value[:] = rng.standard_normal(1)
            x = rng.standard_normal((2, 5, 4, 2))
            label = random_label(rng, (2, 5, 4))
            self.assertLess(finite_difference_check(layer, MSE, x, label).max_relative_error, 1e-7)
            self.assertLess(input_gradient_check(layer, MSE, x, label).max_relative_error, 1e-7)

    def test_backward_before_forward(self):
        layer = Conv2D(1, 1, 3, "c")
        layer.initialize(np.random.default_rng(0))
        with self.assertRaises(ModelError):
            layer.backward(np.zeros((1, 2, 2, 1)))

    def test_uninitialized_parameters(self):
        with self.assertRaises(ModelError):
            Conv2D(1, 1, 3, "c").parameters()
        self.assertEqual(Conv2D(2, 4, 3, "c").param_shapes(), {"c.weight": (3, 3, 2, 4), "c.bias": (4,)})


class TestActivations(unittest.TestCase):
    """Тесты активаций и dropout"""

    def test_relu_gradient(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(0.1, 1.0, size=(2, 4, 4, 1)) * rng.choice([-1.0, 1.0], size=(2, 4, 4, 1))
        label = random_label(rng, (2, 4, 4))
        self.assertLess(input_gradient_check(ReLU("r"), MSE, x, label).max_relative_error, 1e-7)

    def test_sigmoid_gradient_and_range(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 4, 1)) * 3
        label = random_label(rng, (2, 4, 4))
        layer = Sigmoid("s")
        self.assertLess(input_gradient_check(layer, MSE, x, label).max_relative_error, 1e-6)
        out = layer.forward(x)
        self.assertTrue(np.all((out > 0) & (out < 1)))

    def test_dropout_zero_rate_is_identity(self):
        x = np.random.default_rng(6).random((1, 3, 3, 2))
        layer = Dropout(0.0, "d")
        np.testing.assert_array_equal(layer.forward(x, training=True), x)
        np.testing.assert_array_equal(layer.forward(x, training=False), x)

    def test_dropout_modes(self):
        x = np.ones((1, 50, 50, 4))
        layer = Dropout(0.25, "d", seed=1)
        np.testing.assert_array_equal(layer.forward(x, training=False), x)
        out = layer.forward(x, training=True)
        self.assertTrue(set(np.unique(out)) <= {0.0, 1.0 / 0.75})
        self.assertAlmostEqual(float(np.mean(out == 0.0)), 0.25, delta=0.02)
        grad = layer.backward(np.ones_like(x))
        np.testing.assert_array_equal(grad, out)

    def test_dropout_seeded(self):
        x = np.ones((1, 8, 8, 1))
        a = Dropout(0.5, "d", seed=3).forward(x, training=True)
        b = Dropout(0.5, "d", seed=3).forward(x, training=True)
        c = Dropout(0.5, "d", seed=4).forward(x, training=True)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))

    def test_dropout_rate_validation(self):
        with self.assertRaises(ModelError):
            Dropout(1.0, "d")


class TestChannels(unittest.TestCase):
    """Тесты склейки каналов"""

    def test_concat(self):
        a = np.zeros((2, 4, 4, 3))
        b = np.ones((2, 4, 4, 5))
        out = concat_channels(a, b)
        self.assertEqual(out.shape, (2, 4, 4, 8))
        left, right = split_channels(out, 3)
        np.testing.assert_array_equal(left, a)
        np.testing.assert_array_equal(right, b)

    def test_spatial_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            concat_channels(np.zeros((1, 4, 4, 1)), np.zeros((1, 4, 5, 1)))

    def test_tensor4(self):
        self.assertEqual(Tensor4(np.zeros((1, 2, 3, 4))).dims, (1, 2, 3, 4))
        with self.assertRaises(ShapeMismatchError):
            Tensor4(np.zeros((2, 3, 4)))


class TestCompositeGradients(unittest.TestCase):
    """Тесты градиентов составных слоёв"""

    def test_sequential(self):
        rng = np.random.default_rng(7)
        net = Sequential([Conv2D(2, 3, 3, "a"), Sigmoid("s"), Conv2D(3, 1, 1, "b")], "net")
        net.initialize(rng)
        x = rng.standard_normal((2, 4, 4, 2))
        label = random_label(rng, (2, 4, 4))
        self.assertLess(finite_difference_check(net, MSE, x, label).max_relative_error, 1e-6)
        self.assertLess(input_gradient_check(net, MSE, x, label).max_relative_error, 1e-6)

    def test_dense_block(self):
        rng = np.random.default_rng(8)
        block = DenseBlock(2, 2, 2, 0.0, "blk")
        self.assertEqual(block.out_channels, 6)
        net = Sequential([block, Conv2D(6, 1, 1, "out")], "net")
        net.initialize(rng)
        x = rng.standard_normal((1, 4, 4, 2))
        label = random_label(rng, (1, 4, 4))
        self.assertLess(finite_difference_check(net, MSE, x, label).max_relative_error, 1e-4)


if __name__ == "__main__":
    unittest.main()
