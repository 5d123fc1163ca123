"""
Тесты для модуля losses
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# Добавляем путь к модулям
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from seaice_workbench.errors import ShapeMismatchError
from seaice_workbench.losses import (
    LOSSES,
    METRIC_NAMES,
    metrics,
    mse,
    mse_gradient,
    uncertainty_weighted_mae,
    uw_mae_gradient,
)


def pixel(value):
    return np.array([[value]], dtype=float)


def label_of(conc, unc):
    return np.stack([np.asarray(conc, dtype=float), np.asarray(unc, dtype=float)], axis=-1)


class TestWeightedMAE(unittest.TestCase):
    """Тесты MAE со взвешиванием по неопределённости"""

    def test_single_pixel(self):
        self.assertAlmostEqual(uncertainty_weighted_mae(pixel(0.5)[..., None], label_of(pixel(1.0), pixel(0.2))),
                               0.40, places=15)

    def test_full_uncertainty_ignored(self):
        rng = np.random.default_rng(0)
        pred = rng.random((3, 4, 4, 1))
        label = label_of(rng.random((3, 4, 4)), np.ones((3, 4, 4)))
        self.assertEqual(uncertainty_weighted_mae(pred, label), 0.0)
        self.assertFalse(uw_mae_gradient(pred, label).any())

    def test_gradient_magnitude(self):
        rng = np.random.default_rng(1)
        pred = rng.random((2, 3, 5, 1))
        label = label_of(rng.random((2, 3, 5)), np.zeros((2, 3, 5)))
        grad = uw_mae_gradient(pred, label)
        self.assertEqual(grad.shape, pred.shape)
        np.testing.assert_allclose(np.abs(grad), 1.0 / 30)

    def test_kink_subgradient(self):
        label = label_of(pixel(0.3), pixel(0.0))
        self.assertEqual(uw_mae_gradient(pixel(0.3)[..., None], label)[0, 0, 0], 0.0)

    def test_weighted_never_exceeds_plain(self):
        rng = np.random.default_rng(2)
        for _ in range(10000):
            pred = rng.random((2, 2, 1))
            label = label_of(rng.random((2, 2)), rng.random((2, 2)))
            m = metrics(pred, label)
            self.assertLessEqual(m["weighted_mae"], m["mae"] + 1e-15)
            self.assertLessEqual(m["weighted_mse"], m["mse"] + 1e-15)
            err, unc = np.abs(pred[..., 0] - label[..., 0]), label[..., 1]
            if np.any((unc > 0) & (err > 0)):
                self.assertLess(m["weighted_mae"], m["mae"])
                self.assertLess(m["weighted_mse"], m["mse"])

    def test_weighted_strictly_below_plain(self):
        """Один неуверенный пиксель с ненулевой ошибкой делает неравенство строгим"""
        pred = np.full((2, 2, 1), 0.5)
        conc = np.array([[0.5, 0.5], [0.5, 0.3]])
        unc = np.array([[0.0, 0.0], [0.0, 0.5]])
        m = metrics(pred, label_of(conc, unc))
        self.assertLess(m["weighted_mae"], m["mae"])
        self.assertAlmostEqual(m["weighted_mae"], 0.025, places=15)
        self.assertAlmostEqual(m["mae"], 0.05, places=15)
        # неопределённость без ошибки не меняет метрику
        m = metrics(pred, label_of(np.full((2, 2), 0.5), unc))
        self.assertEqual(m["weighted_mae"], m["mae"])

    def test_gradient_against_differences(self):
        rng = np.random.default_rng(3)
        pred = rng.random((1, 4, 4, 1))
        label = label_of(rng.random((1, 4, 4)), rng.random((1, 4, 4)))
        # держимся подальше от излома |x|
        pred[np.abs(pred[..., 0] - label[..., 0]) < 1e-3] += 0.01
        grad = uw_mae_gradient(pred, label)
        eps = 1e-7
        for idx in np.ndindex(pred.shape):
            plus, minus = pred.copy(), pred.copy()
            plus[idx] += eps
            minus[idx] -= eps
            numeric = (uncertainty_weighted_mae(plus, label) - uncertainty_weighted_mae(minus, label)) / (2 * eps)
            self.assertAlmostEqual(grad[idx], numeric, places=7)


class TestMetrics(unittest.TestCase):
    """Тесты набора метрик"""

    def test_metric_names(self):
        m = metrics(pixel(0.5)[..., None], label_of(pixel(0.0), pixel(0.5)))
        self.assertEqual(tuple(m), METRIC_NAMES)
        self.assertAlmostEqual(m["weighted_mse"], 0.125, places=15)
        self.assertAlmostEqual(m["mse"], 0.25, places=15)
        self.assertAlmostEqual(m["mae"], 0.5, places=15)
        self.assertAlmostEqual(m["weighted_mae"], 0.25, places=15)

    def test_mse_gradient(self):
        rng = np.random.default_rng(4)
        pred = rng.random((2, 3, 3, 1))
        label = label_of(rng.random((2, 3, 3)), rng.random((2, 3, 3)))
        grad = mse_gradient(pred, label)
        np.testing.assert_allclose(grad[..., 0], 2 * (pred[..., 0] - label[..., 0]) / 18)
        self.assertAlmostEqual(mse(pred, label), float(np.mean((pred[..., 0] - label[..., 0]) ** 2)))

    def test_shape_errors(self):
        with self.assertRaises(ShapeMismatchError):
            metrics(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)))
        with self.assertRaises(ShapeMismatchError):
            uncertainty_weighted_mae(np.zeros((2, 2, 1)), np.zeros((2, 3, 2)))

    def test_registry(self):
        self.assertEqual(sorted(LOSSES), ["mse", "uw_mae"])


if __name__ == "__main__":
    unittest.main()
