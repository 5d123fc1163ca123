"""
Тесты для модуля config
"""

import logging
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import yaml

# Добавляем путь к модулям
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from seaice_workbench.config import Config, RunConfig, get_default_config, model_config_from, setup_logging
from seaice_workbench.errors import ConfigError
from seaice_workbench.geogrid import Hemisphere
from seaice_workbench.models import Family, preset
from seaice_workbench.training import Stage

REPO_ROOT = Path(__file__).parent.parent


class ConfigTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        env = mock.patch.dict(os.environ)
        env.start()
        self.addCleanup(env.stop)
        for key in ("SEAICE_DATA_ROOT", "SEAICE_JOBS"):
            os.environ.pop(key, None)

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, data) -> str:
        path = self.dir / "config.yaml"
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(data, f)
        return str(path)


class TestConfig(ConfigTestCase):
    """Тесты загрузки конфигурации"""

    def test_repository_config_matches_defaults(self):
        config = Config(str(REPO_ROOT / "config.yaml"))
        self.assertEqual(config.config_data, get_default_config())

    def test_partial_file_is_merged(self):
        config = Config(self.write_config({"training": {"batch_size": 4}, "runtime": {"seed": 9}}))
        self.assertEqual(config.get("training.batch_size"), 4)
        self.assertEqual(config.get("training.learning_rate"), 0.001)
        self.assertEqual(config.get("runtime.seed"), 9)
        self.assertIsNone(config.get("no.such.key"))
        self.assertEqual(config.get("no.such.key", 5), 5)

    def test_missing_explicit_file(self):
        with self.assertRaises(ConfigError):
            Config(str(self.dir / "missing.yaml"))

    def test_malformed_file(self):
        path = self.dir / "config.yaml"
        path.write_text("- just\n- a list\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            Config(str(path))
        path.write_text("dataset: [unclosed\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            Config(str(path))

    def test_overrides(self):
        config = Config(self.write_config({}))
        updated = config.with_overrides({"seed": 7, "layers": None, "handler": print, "augment": True,
                                          "growth_mult": True})
        self.assertEqual(updated.get("runtime.seed"), 7)
        self.assertEqual(updated.get("model.layers_or_blocks"), 4)
        self.assertTrue(updated.get("training.augmentation"))
        self.assertTrue(updated.get("model.growth_multiplicative"))
        self.assertEqual(config.get("runtime.seed"), 0)

    def test_environment(self):
        os.environ["SEAICE_JOBS"] = "3"
        os.environ["SEAICE_DATA_ROOT"] = str(self.dir / "data")
        config = Config(self.write_config({}))
        self.assertEqual(config.get_jobs(), 3)
        self.assertEqual(config.get_data_root(), self.dir / "data")
        os.environ["SEAICE_JOBS"] = "many"
        with self.assertRaises(ConfigError):
            Config(self.write_config({}))

    def test_save_round_trip(self):
        config = Config(self.write_config({"runtime": {"seed": 3}}))
        path = config.save(str(self.dir / "saved.yaml"))
        self.assertEqual(Config(str(path)).config_data, config.config_data)

    def test_logging_setup(self):
        config = Config(self.write_config({"logging": {"level": "DEBUG"}}))
        setup_logging(config)
        self.assertEqual(logging.getLogger().level, logging.DEBUG)
        setup_logging(config, quiet=True)
        self.assertEqual(logging.getLogger().level, logging.WARNING)
        with self.assertRaises(ConfigError):
            setup_logging(Config(self.write_config({"logging": {"level": "LOUD"}})))


class TestRunConfig(ConfigTestCase):
    """Тесты типизированной конфигурации запуска"""

    def test_defaults(self):
        run = RunConfig.from_config(Config(self.write_config({"paths": {"data_root": str(self.dir)}})))
        self.assertEqual(run.strategy.stages, [Stage("S", 50)])
        self.assertEqual(run.strategy.test_dataset_id, "S")
        self.assertIs(run.model.family, Family.FCNN)
        self.assertEqual(run.regions["N"].hemisphere, Hemisphere.NORTH)
        self.assertEqual(run.regions["S"].hemisphere, Hemisphere.SOUTH)
        self.assertEqual(run.datasets_dir, self.dir / "datasets")
        self.assertEqual(run.build.patch_size, run.scene.patch_size)
        self.assertEqual(run.build.batch_size, run.strategy.batch_size)

    def test_stage_list(self):
        data = {"training": {"stages": [{"dataset": "N", "epochs": 32}, {"dataset": "S", "epochs": 18}]}}
        run = RunConfig.from_config(Config(self.write_config(data)))
        self.assertEqual(run.strategy.stages, [Stage("N", 32), Stage("S", 18)])

    def test_invalid_values(self):
        invalid = [
            {"dataset": {"coarse_factor": 5}},
            {"dataset": {"mislabel_rate": 1.5}},
            {"dataset": {"date_start": "2019-08-01"}},
            {"dataset": {"date_end": "July"}},
            {"dataset": {"variance_threshold": -0.1}},
            {"runtime": {"jobs": 0}},
            {"regions": {"X": {"lat_min": -10.0, "lat_max": 10.0, "lon_min": 0.0, "lon_max": 1.0}}},
            {"model": {"layers_or_blocks": -1}},
            {"training": {"stages": "S0"}},
            {"training": {"batch_size": 0}},
        ]
        for data in invalid:
            with self.subTest(data=data):
                with self.assertRaises(ConfigError):
                    RunConfig.from_config(Config(self.write_config(data)))

    def test_model_section(self):
        self.assertEqual(model_config_from({"preset": "unet"}), preset("unet"))
        section = {"family": "densenet", "layers_or_blocks": 2, "initial_filters": 4, "growth": 2,
                   "dense_layers_per_block": 3}
        config = model_config_from(section)
        self.assertIs(config.family, Family.DENSENET)
        self.assertEqual(config.dense_layers_per_block, 3)
        with self.assertRaises(ConfigError):
            model_config_from({"preset": "resnet"})


if __name__ == "__main__":
    unittest.main()
