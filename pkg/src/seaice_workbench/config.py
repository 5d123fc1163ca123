"""
Модуль для работы с конфигурацией проекта

Загружает настройки из config.yaml и .env файлов и собирает из них
типизированную конфигурацию запуска (RunConfig) с учётом флагов CLI.
"""

import copy
import logging
import os
import sys
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from dotenv import load_dotenv

from .errors import ConfigError, InvalidModelConfigError, WorkbenchError
from .models import ModelConfig, preset
from .pipeline import DatasetBuildOptions
from .synth import Region, SceneParams
from .training import TrainingStrategy, parse_stages

logger = logging.getLogger(__name__)

CONFIG_NAME = "config.yaml"

# Флаг CLI (dest argparse) -> ключ конфигурации; флаг побеждает при конфликте
FLAG_TO_KEY: Dict[str, str] = {
    "seed": "runtime.seed",
    "jobs": "runtime.jobs",
    "data_root": "paths.data_root",
    "scene_size": "dataset.scene_size",
    "patch_size": "dataset.patch_size",
    "coarse_factor": "dataset.coarse_factor",
    "n_entries": "dataset.n_entries",
    "mislabel_rate": "dataset.mislabel_rate",
    "variance_threshold": "dataset.variance_threshold",
    "test_fraction": "dataset.test_fraction",
    "median_filter": "dataset.median_filter",
    "preset": "model.preset",
    "family": "model.family",
    "layers": "model.layers_or_blocks",
    "dense_layers": "model.dense_layers_per_block",
    "init": "model.initial_filters",
    "growth": "model.growth",
    "growth_mult": "model.growth_multiplicative",
    "dropout": "model.dropout_rate",
    "in_ch": "model.input_channels",
    "stages": "training.stages",
    "test_dataset": "training.test_dataset",
    "augment": "training.augmentation",
    "batch_size": "training.batch_size",
    "learning_rate": "training.learning_rate",
}


class Config:
    """Класс для работы с конфигурацией проекта"""

    def __init__(self, config_path: Optional[str] = None, data: Optional[Dict[str, Any]] = None):
        """
        Инициализация конфигурации

        Args:
            config_path: Путь к файлу конфигурации; если не задан, config.yaml
                ищется в текущей папке и выше
            data: Готовые данные конфигурации (файл не читается)
        """
        if config_path:
            self.config_path = Path(config_path)
        else:
            current_dir = Path.cwd()
            path = current_dir / CONFIG_NAME
            while not path.exists() and current_dir.parent != current_dir:
                current_dir = current_dir.parent
                path = current_dir / CONFIG_NAME
            self.config_path = path

        self.env_data: Dict[str, Optional[str]] = {}
        if data is not None:
            self.config_data = copy.deepcopy(data)
        else:
            self.config_data = self._load_config(explicit=bool(config_path))
        self._load_env()

    def _load_config(self, explicit: bool) -> Dict[str, Any]:
        """Загружает конфигурацию из YAML файла и дополняет её значениями по умолчанию"""
        if not self.config_path.exists():
            if explicit:
                raise ConfigError(f"config file not found: {self.config_path}")
            logger.warning(f"⚠️ Файл конфигурации {CONFIG_NAME} не найден, используются значения по умолчанию")
            return get_default_config()
        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {self.config_path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {self.config_path} must be a mapping of sections")
        logger.debug(f"Конфигурация загружена из {self.config_path}")
        return _merge(get_default_config(), loaded)

    def _load_env(self):
        """Загружает переменные окружения из .env файла"""
        load_dotenv()
        self.env_data = {
            "SEAICE_DATA_ROOT": os.getenv("SEAICE_DATA_ROOT"),
            "SEAICE_JOBS": os.getenv("SEAICE_JOBS"),
        }
        if self.env_data["SEAICE_DATA_ROOT"]:
            self.set("paths.data_root", self.env_data["SEAICE_DATA_ROOT"])
        if self.env_data["SEAICE_JOBS"]:
            try:
                self.set("runtime.jobs", int(self.env_data["SEAICE_JOBS"]))
            except ValueError:
                raise ConfigError(f"SEAICE_JOBS must be an integer, got {self.env_data['SEAICE_JOBS']!r}") from None

    def get(self, key: str, default: Any = None) -> Any:
        """
        Получает значение конфигурации по ключу

        Args:
            key: Ключ в формате 'section.parameter'
            default: Значение по умолчанию

        Returns:
            Значение параметра или default
        """
        try:
            value = self.config_data
            for k in key.split("."):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any):
        """Устанавливает значение по ключу 'section.parameter'"""
        *sections, last = key.split(".")
        node = self.config_data
        for k in sections:
            node = node.setdefault(k, {})
        node[last] = value

    def get_env(self, key: str, default: Any = None) -> Any:
        """Получает значение переменной окружения"""
        value = self.env_data.get(key)
        return default if value is None else value

    def get_dataset_config(self) -> Dict[str, Any]:
        return self.config_data.get("dataset", {})

    def get_regions_config(self) -> Dict[str, Any]:
        return self.config_data.get("regions", {})

    def get_model_config(self) -> Dict[str, Any]:
        return self.config_data.get("model", {})

    def get_training_config(self) -> Dict[str, Any]:
        return self.config_data.get("training", {})

    def get_paths_config(self) -> Dict[str, Any]:
        return self.config_data.get("paths", {})

    def get_logging_config(self) -> Dict[str, Any]:
        return self.config_data.get("logging", {})

    def get_data_root(self) -> Path:
        return Path(os.path.expanduser(str(self.get("paths.data_root", "data"))))

    def get_jobs(self) -> int:
        return int(self.get("runtime.jobs", 1))

    def save(self, path: Optional[str] = None) -> Path:
        """Записывает конфигурацию в YAML"""
        path = Path(path) if path else self.config_path
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.config_data, f, sort_keys=False, allow_unicode=True)
        return path

    def with_overrides(self, overrides: Mapping[str, Any]) -> "Config":
        """
        Копия конфигурации с применёнными флагами CLI

        Args:
            overrides: Значения флагов по имени dest; None означает «флаг не задан»
        """
        result = Config(str(self.config_path), data=self.config_data)
        for flag, value in overrides.items():
            if value is None or flag not in FLAG_TO_KEY:
                continue
            result.set(FLAG_TO_KEY[flag], value)
        return result


def _merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def get_default_config() -> Dict[str, Any]:
    """Возвращает конфигурацию по умолчанию"""
    return {
        "dataset": {
            "scene_size": 128,
            "patch_size": 64,
            "spacing_km": 1.25,
            "coarse_factor": 8,
            "footprint_fraction": 0.5,
            "edge_sharpness": 12.0,
            "looks": 4,
            "u_min": 0.05,
            "u_max": 0.5,
            "n_entries": 240,
            "mislabel_rate": 0.25,
            "date_start": "2019-07-01",
            "date_end": "2019-07-31",
            "variance_threshold": 0.01,
            "median_filter": True,
            "filter_before_median": True,
            "test_fraction": 0.2,
        },
        "regions": {
            "N": {"lat_min": 72.0, "lat_max": 80.0, "lon_min": -20.0, "lon_max": 20.0},
            "S": {"lat_min": -66.0, "lat_max": -58.0, "lon_min": -20.0, "lon_max": 20.0},
        },
        "model": {
            "preset": None,
            "family": "FCNN",
            "layers_or_blocks": 4,
            "initial_filters": 8,
            "growth": 8,
            "growth_multiplicative": False,
            "dense_layers_per_block": 4,
            "dropout_rate": 0.0,
            "input_channels": 2,
        },
        "training": {
            "stages": "S:50",
            "test_dataset": "S",
            "augmentation": False,
            "batch_size": 16,
            "learning_rate": 0.001,
            "prefetch": 1,
        },
        "paths": {
            "data_root": "data",
            "catalogs": "catalogs",
            "datasets": "datasets",
            "runs": "runs",
            "reports": "reports",
        },
        "runtime": {
            "seed": 0,
            "jobs": 1,
        },
        "logging": {
            "level": "INFO",
            "format": "%(asctime)s - %(levelname)s - %(message)s",
            "log_to_file": False,
            "log_file": "logs/seaice_workbench.log",
        },
    }


def setup_logging(config: Config, quiet: bool = False):
    """
    Настраивает корневой логгер по секции logging

    Args:
        config: Конфигурация
        quiet: Выводить только предупреждения и ошибки
    """
    level_name = str(config.get("logging.level", "INFO")).upper()
    level = logging.WARNING if quiet else getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise ConfigError(f"unknown logging level: {level_name}")
    handlers = [logging.StreamHandler(sys.stderr)]
    if config.get("logging.log_to_file", False):
        log_file = Path(config.get("logging.log_file", "logs/seaice_workbench.log"))
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=level,
        format=config.get("logging.format", "%(asctime)s - %(levelname)s - %(message)s"),
        handlers=handlers,
        force=True,
    )


def _parse_date(value: Any, key: str) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{key} must be an ISO date, got {value!r}") from None


@dataclass
class RunConfig:
    """
    Типизированная конфигурация запуска

    Собирается из Config (с уже применёнными флагами) и проверяется при старте команды.
    """

    seed: int
    jobs: int
    data_root: Path
    catalogs_dir: Path
    datasets_dir: Path
    runs_dir: Path
    reports_dir: Path
    scene: SceneParams
    n_entries: int
    mislabel_rate: float
    date_range: tuple
    regions: Dict[str, Region]
    build: DatasetBuildOptions
    model: ModelConfig
    strategy: TrainingStrategy
    prefetch: int

    @classmethod
    def from_config(cls, config: Config) -> "RunConfig":
        """Собирает и проверяет конфигурацию запуска"""
        try:
            return cls._build(config)
        except ConfigError:
            raise
        except (WorkbenchError, ValueError, TypeError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e

    @classmethod
    def _build(cls, config: Config) -> "RunConfig":
        ds = config.get_dataset_config()
        seed = int(config.get("runtime.seed", 0))
        jobs = int(config.get("runtime.jobs", 1))
        if jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {jobs}")

        scene = SceneParams(
            scene_size=int(ds["scene_size"]),
            patch_size=int(ds["patch_size"]),
            spacing_km=float(ds["spacing_km"]),
            coarse_factor=int(ds["coarse_factor"]),
            footprint_fraction=float(ds["footprint_fraction"]),
            edge_sharpness=float(ds["edge_sharpness"]),
            looks=int(ds["looks"]),
            u_min=float(ds["u_min"]),
            u_max=float(ds["u_max"]),
        )
        if scene.patch_size < 1 or scene.scene_size < 1:
            raise ConfigError("patch size and scene size must be positive")
        if scene.coarse_factor < 2 or scene.scene_size % scene.coarse_factor:
            raise ConfigError(f"coarse factor {scene.coarse_factor} must be >= 2 and divide "
                              f"the scene size {scene.scene_size}")
        if not 0.0 < scene.footprint_fraction <= 1.0:
            raise ConfigError(f"footprint fraction must be in (0, 1], got {scene.footprint_fraction}")
        if not 0.0 <= scene.u_min <= scene.u_max <= 1.0:
            raise ConfigError(f"need 0 <= u_min <= u_max <= 1, got {scene.u_min}, {scene.u_max}")

        mislabel_rate = float(ds["mislabel_rate"])
        if not 0.0 <= mislabel_rate <= 1.0:
            raise ConfigError(f"mislabel rate must be in [0, 1], got {mislabel_rate}")
        n_entries = int(ds["n_entries"])
        if n_entries < 1:
            raise ConfigError(f"n_entries must be positive, got {n_entries}")
        start = _parse_date(ds["date_start"], "dataset.date_start")
        end = _parse_date(ds["date_end"], "dataset.date_end")
        if start > end:
            raise ConfigError(f"inverted date range: {start} > {end}")

        regions = {
            str(name): Region(float(r["lat_min"]), float(r["lat_max"]), float(r["lon_min"]), float(r["lon_max"]))
            for name, r in config.get_regions_config().items()
        }
        if not regions:
            raise ConfigError("at least one region must be configured")

        build = DatasetBuildOptions(
            patch_size=scene.patch_size,
            variance_threshold=float(ds["variance_threshold"]),
            median_filter=bool(ds["median_filter"]),
            filter_before_median=bool(ds["filter_before_median"]),
            test_fraction=float(ds["test_fraction"]),
            batch_size=int(config.get("training.batch_size", 16)),
            seed=seed,
            jobs=jobs,
        )
        if build.variance_threshold < 0:
            raise ConfigError(f"variance threshold must be >= 0, got {build.variance_threshold}")

        tr = config.get_training_config()
        stages = tr["stages"]
        stages = parse_stages(stages) if isinstance(stages, str) else parse_stages(
            ",".join(f"{s['dataset']}:{s['epochs']}" for s in stages))
        strategy = TrainingStrategy(
            stages=stages,
            test_dataset_id=str(tr["test_dataset"]),
            augmentation=bool(tr["augmentation"]),
            batch_size=int(tr["batch_size"]),
            seed=seed,
            learning_rate=float(tr["learning_rate"]),
        )

        data_root = config.get_data_root()
        paths = config.get_paths_config()
        return cls(
            seed=seed,
            jobs=jobs,
            data_root=data_root,
            catalogs_dir=data_root / paths.get("catalogs", "catalogs"),
            datasets_dir=data_root / paths.get("datasets", "datasets"),
            runs_dir=data_root / paths.get("runs", "runs"),
            reports_dir=data_root / paths.get("reports", "reports"),
            scene=scene,
            n_entries=n_entries,
            mislabel_rate=mislabel_rate,
            date_range=(start, end),
            regions=regions,
            build=build,
            model=model_config_from(config.get_model_config()),
            strategy=strategy,
            prefetch=max(1, int(tr.get("prefetch", 1))),
        )


def model_config_from(section: Mapping[str, Any]) -> ModelConfig:
    """
    Конфигурация модели из секции model

    Если задан preset, остальные поля секции не используются.
    """
    fields = ("family", "layers_or_blocks", "initial_filters", "growth", "growth_multiplicative",
              "dense_layers_per_block", "dropout_rate", "input_channels")
    try:
        if section.get("preset"):
            return preset(str(section["preset"]))
        return ModelConfig.from_dict({k: section[k] for k in fields if k in section})
    except InvalidModelConfigError as e:
        raise ConfigError(str(e)) from e
