"""
Sea Ice Workbench - верстак оценки концентрации морского льда по SAR-подобным снимкам

Этот модуль предоставляет инструменты для:
- Генерации синтетических сцен, каталогов снимков и карт концентрации
- Сборки обучающих датасетов с коррекцией направления прохода
- Обучения полносвёрточных сетей (FCNN, UNet, DenseNet) по этапам
- Оценки моделей, поиска снимков и сравнения с натурными наблюдениями
"""

__version__ = "0.1.0"
__author__ = "Sergey"

from .errors import WorkbenchError
from .models import Family, ModelConfig, build_model, count_parameters, preset
from .pipeline import DatasetBuildOptions, build_dataset
from .synth import gen_catalog
from .training import TrainingStrategy, parse_stages, train

__all__ = [
    "WorkbenchError",
    "Family",
    "ModelConfig",
    "build_model",
    "count_parameters",
    "preset",
    "DatasetBuildOptions",
    "build_dataset",
    "gen_catalog",
    "TrainingStrategy",
    "parse_stages",
    "train",
]
