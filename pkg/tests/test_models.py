"""
Тесты для модуля models
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# Добавляем путь к модулям
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from seaice_workbench.errors import InvalidModelConfigError, ShapeMismatchError
from seaice_workbench.models import (
    PRESETS,
    Family,
    Mode,
    ModelConfig,
    build_model,
    count_parameters,
    predict,
    predict_batch,
    preset,
)

TOY_CONFIGS = [
    ModelConfig(Family.FCNN, 2, 4, 4),
    ModelConfig(Family.FCNN, 3, 2, 2, growth_multiplicative=True, dropout_rate=0.3),
    ModelConfig(Family.UNET, 2, 2, 2, growth_multiplicative=True),
    ModelConfig(Family.UNET, 3, 2, 1),
    ModelConfig(Family.DENSENET, 2, 4, 2, dense_layers_per_block=2),
    ModelConfig(Family.DENSENET, 1, 3, 1, dense_layers_per_block=3, input_channels=1),
]


class TestParameterCount(unittest.TestCase):
    """Тесты подсчёта параметров"""

    def test_reference_fcnn(self):
        config = ModelConfig(Family.FCNN, layers_or_blocks=10, initial_filters=32, growth=32)
        self.assertEqual(count_parameters(config), 3043937)
        self.assertEqual(count_parameters(PRESETS["cnn"]), 3043937)

    def test_small_counts(self):
        self.assertEqual(count_parameters(ModelConfig(Family.FCNN, 1, 4, 0)), 81)
        self.assertEqual(count_parameters(ModelConfig(Family.FCNN, 0, 4, 0)), 3)
        self.assertEqual(count_parameters(ModelConfig(Family.UNET, 2, 2, 2, growth_multiplicative=True)), 489)
        self.assertEqual(count_parameters(ModelConfig(Family.DENSENET, 2, 4, 2, dense_layers_per_block=2)), 489)

    def test_count_matches_built_model(self):
        for config in TOY_CONFIGS:
            with self.subTest(config=config):
                self.assertEqual(count_parameters(config), build_model(config).count_parameters())

    def test_presets_count_without_allocation(self):
        for name in PRESETS:
            self.assertGreater(count_parameters(preset(name)), 0)


class TestForward(unittest.TestCase):
    """Тесты прямого прохода"""

    def test_dimensions_preserved(self):
        rng = np.random.default_rng(0)
        for config in TOY_CONFIGS:
            with self.subTest(config=config):
                model = build_model(config, seed=1)
                for h, w in ((4, 4), (5, 7), (1, 3)):
                    x = rng.random((2, h, w, config.input_channels))
                    self.assertEqual(model.forward(x).shape, (2, h, w, 1))

    def test_zero_weights_give_half(self):
        model = build_model(ModelConfig(Family.FCNN, 2, 4, 4), seed=0)
        for p in model.parameters():
            p.value[...] = 0.0
        out = predict(model, np.random.default_rng(1).random((6, 6, 2)))
        self.assertEqual(out.shape, (6, 6, 1))
        np.testing.assert_array_equal(out, 0.5)

    def test_eval_is_deterministic(self):
        config = ModelConfig(Family.FCNN, 2, 4, 4, dropout_rate=0.5)
        model = build_model(config, seed=2)
        x = np.random.default_rng(3).random((1, 5, 5, 2))
        np.testing.assert_array_equal(model.forward(x), model.forward(x))
        self.assertIs(model.mode, Mode.EVAL)

    def test_training_dropout_is_seeded(self):
        config = ModelConfig(Family.FCNN, 2, 8, 0, dropout_rate=0.5)
        x = np.random.default_rng(4).random((1, 6, 6, 2))
        a = build_model(config, seed=5).train()
        b = build_model(config, seed=5).train()
        first = a.forward(x)
        np.testing.assert_array_equal(first, b.forward(x))
        self.assertFalse(np.array_equal(first, a.forward(x, training=False)))

    def test_output_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(6)
        families = list(Family)
        for _ in range(1000):
            family = families[int(rng.integers(len(families)))]
            config = ModelConfig(family, int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 3)),
                                 dense_layers_per_block=1)
            model = build_model(config, seed=int(rng.integers(1 << 30)))
            x = rng.standard_normal((1, 3, 3, 2)) * 50.0
            out = predict_batch(model, x)
            self.assertTrue(np.all((out > 0.0) & (out < 1.0)))

    def test_wrong_input_channels(self):
        model = build_model(ModelConfig(Family.FCNN, 1, 2, 0))
        with self.assertRaises(ShapeMismatchError):
            model.forward(np.zeros((1, 4, 4, 3)))
        with self.assertRaises(ShapeMismatchError):
            model.forward(np.zeros((4, 4, 2)))


class TestConfig(unittest.TestCase):
    """Тесты конфигурации архитектуры"""

    def test_invalid_configs(self):
        invalid = [
            dict(family=Family.FCNN, layers_or_blocks=-1, initial_filters=4, growth=0),
            dict(family=Family.UNET, layers_or_blocks=0, initial_filters=4, growth=2),
            dict(family=Family.FCNN, layers_or_blocks=1, initial_filters=0, growth=0),
            dict(family=Family.FCNN, layers_or_blocks=1, initial_filters=4, growth=0, dropout_rate=1.0),
            dict(family=Family.DENSENET, layers_or_blocks=2, initial_filters=4, growth=2),
            dict(family=Family.UNET, layers_or_blocks=2, initial_filters=4, growth=0, growth_multiplicative=True),
            dict(family="RESNET", layers_or_blocks=1, initial_filters=4, growth=0),
        ]
        for kwargs in invalid:
            with self.subTest(**{k: str(v) for k, v in kwargs.items()}):
                with self.assertRaises(InvalidModelConfigError):
                    ModelConfig(**kwargs)

    def test_family_names(self):
        self.assertIs(Family.parse("cnn"), Family.FCNN)
        self.assertIs(Family.parse("unet"), Family.UNET)
        self.assertEqual([f.display_name for f in Family], ["CNN", "UNet", "DenseNet"])
        for family in Family:
            self.assertIs(Family.from_code(family.code), family)

    def test_filters_growth(self):
        additive = ModelConfig(Family.FCNN, 3, 32, 32)
        self.assertEqual([additive.filters_at(i) for i in range(3)], [32, 64, 96])
        multiplicative = preset("unet")
        self.assertEqual([multiplicative.filters_at(i) for i in range(4)], [128, 256, 512, 1024])

    def test_dict_round_trip(self):
        for config in TOY_CONFIGS:
            self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)
        with self.assertRaises(InvalidModelConfigError):
            ModelConfig.from_dict({"family": "FCNN"})

    def test_preset_overrides(self):
        config = preset("DenseNet", dropout_rate=0.0)
        self.assertEqual(config.dense_layers_per_block, 8)
        self.assertEqual(config.dropout_rate, 0.0)
        with self.assertRaises(InvalidModelConfigError):
            preset("resnet")


class TestState(unittest.TestCase):
    """Тесты сохранения и замены весов"""

    def test_load_state(self):
        config = ModelConfig(Family.UNET, 2, 2, 2, growth_multiplicative=True)
        source = build_model(config, seed=1)
        target = build_model(config, seed=2)
        x = np.random.default_rng(7).random((1, 4, 4, 2))
        self.assertFalse(np.array_equal(source.forward(x), target.forward(x)))
        target.load_state(source.state())
        np.testing.assert_array_equal(source.forward(x), target.forward(x))

    def test_load_state_mismatch(self):
        model = build_model(ModelConfig(Family.FCNN, 1, 4, 0))
        other = build_model(ModelConfig(Family.FCNN, 1, 5, 0))
        with self.assertRaises(ShapeMismatchError):
            model.load_state(other.state())
        with self.assertRaises(ShapeMismatchError):
            model.load_state({})

    def test_state_is_a_copy(self):
        model = build_model(TOY_CONFIGS[0], seed=0)
        state = model.state()
        next(iter(state.values()))[...] = 123.0
        self.assertFalse(np.any(model.parameters()[0].value == 123.0))


if __name__ == "__main__":
    unittest.main()
