"""
Обучение моделей

Предоставляет функциональность для:
- Описания стратегии обучения (этапы по датасетам, аугментация, seed)
- Именования запусков в виде Model_TrainingData_TestData[_A]
- Оптимизатора Adam
- Цикла обучения со сменой датасета между этапами
- Журнала метрик по эпохам и его экспорта
"""

import itertools
import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .checkpoint import SUFFIX as CHECKPOINT_SUFFIX
from .checkpoint import save_checkpoint
from .errors import ConfigError, DataFormatError, MissingDatasetError, TrainingDivergedError
from .losses import METRIC_NAMES, metrics, uncertainty_weighted_mae, uw_mae_gradient
from .models import Family, Model
from .pipeline import Batch, DatasetSplits, augment, load_batch
from .seeding import make_rng

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = 50
DEFAULT_SWITCH_EPOCH = 32


@dataclass(frozen=True)
class Stage:
    """Этап обучения: датасет и число эпох"""

    dataset_id: str
    epochs: int

    def __post_init__(self):
        if not self.dataset_id:
            raise ConfigError("stage dataset id must not be empty")
        if self.epochs < 1:
            raise ConfigError(f"stage {self.dataset_id}: epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainingStrategy:
    """Стратегия обучения"""

    stages: List[Stage]
    test_dataset_id: str
    augmentation: bool = False
    batch_size: int = 16
    seed: int = 0
    learning_rate: float = 1e-3

    def __post_init__(self):
        self.stages = [s if isinstance(s, Stage) else Stage(*s) for s in self.stages]
        if not self.stages:
            raise ConfigError("training strategy needs at least one stage")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ConfigError(f"learning rate must be a non-negative number, got {self.learning_rate}")

    @property
    def total_epochs(self) -> int:
        return sum(s.epochs for s in self.stages)

    def stage_of_epoch(self, epoch: int) -> int:
        """Индекс этапа (от 0) для эпохи с номером epoch (от 1)"""
        boundary = 0
        for index, stage in enumerate(self.stages):
            boundary += stage.epochs
            if epoch <= boundary:
                return index
        raise ValueError(f"epoch {epoch} is beyond the strategy's {self.total_epochs} epochs")


def parse_stages(text: str) -> List[Stage]:
    """
    Разбирает список этапов вида "N:32,S:18"

    Args:
        text: Этапы через запятую, каждый - идентификатор датасета и число эпох

    Returns:
        Список этапов
    """
    stages = []
    for chunk in str(text).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        dataset_id, sep, epochs = chunk.partition(":")
        if not sep:
            raise ConfigError(f"stage {chunk!r} must look like DATASET:EPOCHS")
        try:
            stages.append(Stage(dataset_id.strip(), int(epochs)))
        except ValueError as e:
            raise ConfigError(f"invalid stage {chunk!r}: {e}") from e
    return stages


def format_stages(stages: Sequence[Stage]) -> str:
    return ",".join(f"{s.dataset_id}:{s.epochs}" for s in stages)


def run_name(family: Union[Family, str], strategy: TrainingStrategy) -> str:
    """
    Имя запуска Model_TrainingData_TestData[_A]

    Examples:
        CNN, [(S, 50)], тест S -> "CNN_S_S"
        UNet, [(N, 32), (S, 18)], тест S, аугментация -> "UNet_NS_S_A"
    """
    family = Family.parse(family)
    training_data = "".join(s.dataset_id for s in strategy.stages)
    name = f"{family.display_name}_{training_data}_{strategy.test_dataset_id}"
    return name + "_A" if strategy.augmentation else name


class Adam:
    """Оптимизатор Adam без затухания весов"""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, parameters):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p in parameters:
            m = self._m.setdefault(p.name, np.zeros_like(p.value))
            v = self._v.setdefault(p.name, np.zeros_like(p.value))
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.value -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


# --- Журнал метрик -------------------------------------------------------------

@dataclass
class EpochRecord:
    """Метрики одной эпохи"""

    epoch: int
    stage: int
    dataset_id: str
    train: Dict[str, float]
    test: Dict[str, float]
    stage_start: bool = False
    seconds: float = field(default=0.0, compare=False)


@dataclass
class MetricsLog:
    """Журнал метрик запуска по эпохам"""

    run_name: str
    records: List[EpochRecord] = field(default_factory=list)
    metric_names: Tuple[str, ...] = METRIC_NAMES

    def append(self, record: EpochRecord):
        expected = len(self.records) + 1
        if record.epoch != expected:
            raise ValueError(f"epoch {record.epoch} breaks contiguity, expected {expected}")
        self.records.append(record)

    @property
    def epochs(self) -> int:
        return len(self.records)

    def columns(self) -> List[str]:
        return (["run", "epoch", "stage", "dataset", "stage_start"]
                + [f"train_{m}" for m in self.metric_names] + [f"test_{m}" for m in self.metric_names])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row = {"run": self.run_name, "epoch": r.epoch, "stage": r.stage, "dataset": r.dataset_id,
                   "stage_start": int(r.stage_start)}
            row.update({f"train_{m}": r.train[m] for m in self.metric_names})
            row.update({f"test_{m}": r.test[m] for m in self.metric_names})
            rows.append(row)
        return pd.DataFrame(rows, columns=self.columns())

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> List["MetricsLog"]:
        """Восстанавливает журналы (по одному на запуск) из таблицы"""
        metric_names = tuple(c[len("train_"):] for c in df.columns if c.startswith("train_"))
        logs = []
        for name, group in df.groupby("run", sort=False):
            log = cls(str(name), metric_names=metric_names)
            for row in group.to_dict("records"):
                log.append(EpochRecord(
                    epoch=int(row["epoch"]),
                    stage=int(row["stage"]),
                    dataset_id=str(row["dataset"]),
                    train={m: float(row[f"train_{m}"]) for m in metric_names},
                    test={m: float(row[f"test_{m}"]) for m in metric_names},
                    stage_start=bool(row["stage_start"]),
                ))
            logs.append(log)
        return logs


def write_metrics_table(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def export_metrics(log: MetricsLog, path: Union[str, Path]) -> Path:
    """Экспортирует журнал в CSV (одна строка на эпоху)"""
    return write_metrics_table(log.to_frame(), path)


def read_metrics(path: Union[str, Path]) -> List[MetricsLog]:
    """Читает журналы метрик из CSV"""
    try:
        df = pd.read_csv(path, float_precision="round_trip", dtype={"run": str, "dataset": str},
                         keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataFormatError(f"cannot read metrics file {path}: {e}") from e
    missing = [c for c in ("run", "epoch", "stage", "dataset", "stage_start") if c not in df.columns]
    if missing:
        raise DataFormatError(f"metrics file {path} lacks columns: {missing}")
    return MetricsLog.from_frame(df)


# --- Цикл обучения -------------------------------------------------------------

def iter_batches(paths: Iterable[Path], prefetch: int = 1) -> Iterator[Batch]:
    """Загружает батчи по порядку, читая до prefetch файлов наперёд в фоновом потоке"""
    paths = iter(paths)
    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = deque(pool.submit(load_batch, p) for p in itertools.islice(paths, max(1, prefetch)))
        while pending:
            batch = pending.popleft().result()
            following = next(paths, None)
            if following is not None:
                pending.append(pool.submit(load_batch, following))
            yield batch


def evaluate_batches(model: Model, paths: Sequence[Path], prefetch: int = 1) -> Dict[str, float]:
    """
    Метрики модели на наборе батчей в режиме оценки

    Сумма по батчам выполняется в порядке paths, так что результат
    не зависит от порядка загрузки.

    Returns:
        Словарь метрик, усреднённых по всем пикселям всех образцов
    """
    totals = dict.fromkeys(METRIC_NAMES, 0.0)
    count = 0
    for batch in iter_batches(paths, prefetch):
        pred = model.forward(batch.images(), training=False)
        values = metrics(pred, batch.labels())
        for name in METRIC_NAMES:
            totals[name] += values[name] * batch.batch_size
        count += batch.batch_size
    if count == 0:
        return {name: float("nan") for name in METRIC_NAMES}
    return {name: totals[name] / count for name in METRIC_NAMES}


def _check_datasets(strategy: TrainingStrategy, datasets: Mapping[str, DatasetSplits]):
    for stage in strategy.stages:
        splits = datasets.get(stage.dataset_id)
        if splits is None or not splits.train:
            raise MissingDatasetError(f"dataset {stage.dataset_id!r} has no training batches")
    test = datasets.get(strategy.test_dataset_id)
    if test is None or not test.test:
        raise MissingDatasetError(f"dataset {strategy.test_dataset_id!r} has no test batches")


def train(model: Model, strategy: TrainingStrategy, datasets: Mapping[str, DatasetSplits],
          checkpoint_dir: Optional[Union[str, Path]] = None, prefetch: int = 1,
          progress: bool = False) -> Tuple[Model, MetricsLog]:
    """
    Обучает модель по стратегии

    Каждая эпоха проходит по батчам датасета текущего этапа в перемешанном
    порядке (seed эпохи), при включённой аугментации каждый образец
    преобразуется на лету. В конце эпохи на обучающем и тестовом наборах
    считаются все четыре метрики в режиме оценки. Параметры переходят
    между этапами без изменений. Размер батчей датасета обязан совпадать
    с strategy.batch_size, иначе ConfigError.

    Args:
        model: Модель (новая или загруженная из чекпойнта)
        strategy: Стратегия обучения
        datasets: Файлы батчей по идентификаторам датасетов
        checkpoint_dir: Папка чекпойнтов (после каждого этапа и в конце)
        prefetch: Сколько батчей загружать наперёд
        progress: Показывать ли индикатор прогресса

    Returns:
        Кортеж (обученная модель, журнал метрик)
    """
    _check_datasets(strategy, datasets)
    name = run_name(model.config.family, strategy)
    log = MetricsLog(name)
    optimizer = Adam(strategy.learning_rate)
    model.reseed_dropout(strategy.seed)
    test_paths = datasets[strategy.test_dataset_id].test
    logger.info(f"Обучение {name}: {strategy.total_epochs} эпох, этапы "
                f"{format_stages(strategy.stages)}, lr={strategy.learning_rate}")

    epoch = 0
    bar = tqdm(total=strategy.total_epochs, disable=not progress, desc=name)
    try:
        for stage_index, stage in enumerate(strategy.stages):
            train_paths = list(datasets[stage.dataset_id].train)
            for local_epoch in range(stage.epochs):
                epoch += 1
                started = time.perf_counter()
                order = make_rng(strategy.seed, f"shuffle-{epoch}").permutation(len(train_paths))
                shuffled = [train_paths[i] for i in order]
                augment_rng = make_rng(strategy.seed, f"augment-{epoch}")
                model.train()
                for path, batch in zip(shuffled, iter_batches(shuffled, prefetch)):
                    if batch.batch_size != strategy.batch_size:
                        raise ConfigError(f"{path}: batch size {batch.batch_size} does not match the configured "
                                          f"{strategy.batch_size}; rebuild dataset {stage.dataset_id!r} "
                                          f"or change training.batch_size")
                    samples = batch.samples
                    if strategy.augmentation:
                        samples = [augment(s, augment_rng) for s in samples]
                    images = np.stack([s.image for s in samples])
                    labels = np.stack([s.label.data for s in samples])

                    model.zero_grad()
                    pred = model.forward(images)
                    loss = uncertainty_weighted_mae(pred, labels)
                    if not np.isfinite(loss):
                        raise TrainingDivergedError(
                            f"{name}: loss became {loss} at epoch {epoch}",
                            diagnostics={
                                "run": name,
                                "epoch": epoch,
                                "stage": stage_index + 1,
                                "batch": str(path),
                                "loss": loss,
                                "max_abs_parameter": max(float(np.max(np.abs(p.value)))
                                                         for p in model.parameters()),
                            },
                        )
                    model.backward(uw_mae_gradient(pred, labels))
                    optimizer.step(model.parameters())

                model.eval()
                record = EpochRecord(
                    epoch=epoch,
                    stage=stage_index + 1,
                    dataset_id=stage.dataset_id,
                    train=evaluate_batches(model, train_paths, prefetch),
                    test=evaluate_batches(model, test_paths, prefetch),
                    stage_start=local_epoch == 0,
                    seconds=time.perf_counter() - started,
                )
                log.append(record)
                logger.info(f"{name} эпоха {epoch}/{strategy.total_epochs} [{stage.dataset_id}]: "
                            f"train wMAE={record.train['weighted_mae']:.4f}, "
                            f"test wMAE={record.test['weighted_mae']:.4f}")
                bar.update(1)

            if checkpoint_dir is not None:
                save_checkpoint(Path(checkpoint_dir) / f"{name}_stage{stage_index + 1}{CHECKPOINT_SUFFIX}",
                                model, name)
    finally:
        bar.close()
        model.eval()

    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / f"{name}_final{CHECKPOINT_SUFFIX}", model, name)
    logger.info(f"✅ Обучение {name} завершено")
    return model, log
