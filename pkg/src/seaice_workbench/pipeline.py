"""
Конвейер подготовки обучающего датасета

Предоставляет функциональность для:
- Сборки пар изображение-метка из элементов каталога и карт концентрации
- Фильтрации «неинтересных» патчей по дисперсии концентрации
- Сглаживания меток медианным фильтром 5x5
- Аугментации (повороты и отражения)
- Упаковки батчей в отдельные файлы и их загрузки
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from scipy import ndimage
from tqdm import tqdm

from . import batch_io, raster_io
from .errors import ConfigError, DataFormatError, GeometryError, ImageReadError, ShapeMismatchError
from .geogrid import (
    ConcentrationChart,
    LabelPatch,
    bilinear_at,
    correct_quicklook_orientation,
    derive_pass_direction,
    reconcile_pass_direction,
    resample_chart_to_footprint,
)
from .seeding import make_rng
from .synth import CatalogEntry

logger = logging.getLogger(__name__)

BATCH_SUFFIX = ".sicb"
DEFAULT_VARIANCE_THRESHOLD = 0.01

# Преобразования группы диэдра квадрата; индекс - номер преобразования
DIHEDRAL_TRANSFORMS = (
    "identity",
    "rot90",
    "rot180",
    "rot270",
    "flip_horizontal",
    "flip_vertical",
    "transpose",
    "anti_transpose",
)
# Преобразования, меняющие местами оси H и W
_AXIS_SWAPPING = {1, 3, 6, 7}


@dataclass
class Sample:
    """Пара изображение-метка"""

    image: np.ndarray
    label: LabelPatch
    source_id: str

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float64)
        if not isinstance(self.label, LabelPatch):
            self.label = LabelPatch(self.label)
        if image.ndim != 3 or image.shape[2] != 2:
            raise ShapeMismatchError(f"image must be (H, W, 2), got {image.shape}")
        if image.shape[:2] != self.label.data.shape[:2]:
            raise ShapeMismatchError(
                f"image {image.shape[:2]} and label {self.label.data.shape[:2]} differ in size"
            )
        if not np.all((image >= 0.0) & (image <= 1.0)):
            raise ShapeMismatchError("image values must lie in [0, 1]")
        self.image = image

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass
class Batch:
    """Батч фиксированного размера"""

    samples: List[Sample]
    batch_size: int

    def __post_init__(self):
        if len(self.samples) != self.batch_size:
            raise ShapeMismatchError(f"batch holds {len(self.samples)} samples, expected {self.batch_size}")
        shapes = {s.shape for s in self.samples}
        if len(shapes) > 1:
            raise ShapeMismatchError(f"samples in a batch differ in size: {sorted(shapes)}")

    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.stack([s.label.data for s in self.samples])


@dataclass
class DatasetSplits:
    """Файлы батчей одного датасета"""

    dataset_id: str
    train: List[Path] = field(default_factory=list)
    test: List[Path] = field(default_factory=list)


# --- Сборка образцов ----------------------------------------------------------

def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """
    Билинейное изменение размера с совмещением угловых пикселей

    Args:
        image: Изображение (H, W, K)
        out_h: Новая высота
        out_w: Новая ширина

    Returns:
        Изображение (out_h, out_w, K)
    """
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return np.asarray(image, dtype=np.float64)
    rows = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.array([(h - 1) / 2.0])
    cols = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.array([(w - 1) / 2.0])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return bilinear_at(np.asarray(image, dtype=np.float64), rr, cc)


def build_sample(entry: CatalogEntry, chart: ConcentrationChart, out_h: int, out_w: int) -> Sample:
    """
    Собирает пару изображение-метка для элемента каталога

    Изображение исправляется по ориентации (сверка направления прохода)
    и приводится к размеру out_h×out_w; метка пересэмплируется с карты.

    Args:
        entry: Элемент каталога
        chart: Карта концентрации, покрывающая контур снимка
        out_h: Высота образца
        out_w: Ширина образца

    Returns:
        Sample
    """
    try:
        image = raster_io.read_image(entry.image_path)
    except (OSError, DataFormatError) as e:
        raise ImageReadError(entry.id, str(e)) from e
    if image.shape[2] != 2:
        raise ImageReadError(entry.id, f"expected 2 channels, found {image.shape[2]}")

    reconciliation = reconcile_pass_direction(entry.reported_direction, derive_pass_direction(entry.footprint))
    if reconciliation.needs_correction:
        logger.debug(f"{entry.id}: направление прохода {reconciliation.reported.value} "
                     f"не совпадает с вычисленным {reconciliation.derived.value}, поворот на 180°")
    image = correct_quicklook_orientation(image, reconciliation)
    image = np.clip(resize_bilinear(image, out_h, out_w), 0.0, 1.0)
    label = resample_chart_to_footprint(chart, entry.footprint, out_h, out_w)
    return Sample(image, label, entry.id)


def audit_pass_directions(entries: Sequence[CatalogEntry]) -> pd.DataFrame:
    """
    Сводка заявленных и вычисленных направлений прохода

    Returns:
        DataFrame с колонками id, reported, derived, needs_correction
    """
    rows = []
    for entry in entries:
        rec = reconcile_pass_direction(entry.reported_direction, derive_pass_direction(entry.footprint))
        rows.append({
            "id": entry.id,
            "reported": rec.reported.value,
            "derived": rec.derived.value,
            "needs_correction": rec.needs_correction,
        })
    return pd.DataFrame(rows, columns=["id", "reported", "derived", "needs_correction"])


# --- Фильтрация и сглаживание -------------------------------------------------

def concentration_variance(label: Union[LabelPatch, np.ndarray]) -> float:
    """Популяционная дисперсия канала концентрации"""
    data = label.data if isinstance(label, LabelPatch) else np.asarray(label)
    return float(np.var(data[..., 0]))


def variance_filter(samples: Sequence[Sample], threshold: float) -> Tuple[List[Sample], List[Sample]]:
    """
    Делит образцы по дисперсии концентрации метки

    Args:
        samples: Образцы
        threshold: Порог дисперсии (образцы с дисперсией >= порога сохраняются)

    Returns:
        Кортеж (сохранённые, отклонённые), порядок исходный
    """
    if threshold < 0:
        raise ConfigError(f"variance threshold must be non-negative, got {threshold}")
    kept, rejected = [], []
    for sample in samples:
        if concentration_variance(sample.label) >= threshold:
            kept.append(sample)
        else:
            rejected.append(sample)
    return kept, rejected


def median_filter_5x5(patch: np.ndarray) -> np.ndarray:
    """Медианный фильтр 5x5 с повторением крайних пикселей"""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 2:
        raise ShapeMismatchError(f"median filter expects a 2-D patch, got {patch.shape}")
    return ndimage.median_filter(patch, size=5, mode="nearest")


def smooth_label(label: LabelPatch) -> LabelPatch:
    """Применяет медианный фильтр к обоим каналам метки"""
    channels = [median_filter_5x5(label.data[..., k]) for k in range(label.data.shape[2])]
    return LabelPatch(np.stack(channels, axis=-1))


# --- Аугментация -------------------------------------------------------------

def apply_dihedral(array: np.ndarray, k: int) -> np.ndarray:
    """
    Применяет преобразование группы диэдра к двум первым осям массива

    Args:
        array: Массив (H, W, ...)
        k: Номер преобразования в DIHEDRAL_TRANSFORMS

    Returns:
        Преобразованный массив
    """
    if k == 0:
        return array
    if k in (1, 2, 3):
        return np.rot90(array, k, axes=(0, 1))
    if k == 4:
        return array[:, ::-1]
    if k == 5:
        return array[::-1, :]
    if k == 6:
        return np.swapaxes(array, 0, 1)
    if k == 7:
        return np.rot90(np.swapaxes(array, 0, 1), 2, axes=(0, 1))
    raise ValueError(f"unknown dihedral transform index: {k}")


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """
    Случайное преобразование образца (повороты и отражения)

    Одно из 8 преобразований выбирается равновероятно и применяется
    одинаково к изображению и обоим каналам метки.
    """
    k = int(rng.integers(len(DIHEDRAL_TRANSFORMS)))
    h, w = sample.shape
    if k in _AXIS_SWAPPING and h != w:
        raise ConfigError(f"augmentation drew {DIHEDRAL_TRANSFORMS[k]} for a non-square {h}x{w} sample; "
                          "configure square patches")
    image = np.ascontiguousarray(apply_dihedral(sample.image, k))
    label = np.ascontiguousarray(apply_dihedral(sample.label.data, k))
    return Sample(image, LabelPatch(label), sample.source_id)


# --- Батчи --------------------------------------------------------------------

def pack_batches(samples: Sequence[Sample], batch_size: int, out_dir: Union[str, Path],
                 prefix: str = "batch") -> List[Path]:
    """
    Упаковывает образцы в файлы батчей

    Неполный последний батч отбрасывается: обучение требует полных батчей.

    Args:
        samples: Образцы одного размера
        batch_size: Размер батча
        out_dir: Папка для файлов
        prefix: Префикс имён файлов

    Returns:
        Пути к файлам батчей
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataFormatError(f"cannot create batch directory {out_dir}: {e}") from e

    n_full = len(samples) // batch_size
    dropped = len(samples) - n_full * batch_size
    if dropped:
        logger.warning(f"⚠️ Неполный батч отброшен: {dropped} образцов из {len(samples)} "
                       f"(размер батча {batch_size})")

    paths = []
    for b in range(n_full):
        chunk = samples[b * batch_size:(b + 1) * batch_size]
        images = np.stack([s.image for s in chunk])
        labels = np.stack([s.label.data for s in chunk])
        paths.append(batch_io.write_batch(out_dir / f"{prefix}_{b:05d}{BATCH_SUFFIX}", images, labels))
    logger.info(f"Записано {len(paths)} батчей в {out_dir}")
    return paths


def load_batch(path: Union[str, Path]) -> Batch:
    """Загружает батч из файла"""
    images, labels = batch_io.read_batch(path)
    stem = Path(path).stem
    samples = [Sample(images[i], LabelPatch(labels[i]), f"{stem}:{i}") for i in range(images.shape[0])]
    return Batch(samples, len(samples))


def discover_dataset(root: Union[str, Path], dataset_id: str) -> DatasetSplits:
    """Находит файлы батчей датасета в папке <root>/<dataset_id>/{train,test}"""
    base = Path(root) / dataset_id
    return DatasetSplits(
        dataset_id=dataset_id,
        train=sorted((base / "train").glob(f"*{BATCH_SUFFIX}")),
        test=sorted((base / "test").glob(f"*{BATCH_SUFFIX}")),
    )


# --- Сборка датасета целиком -----------------------------------------------------

@dataclass
class DatasetBuildOptions:
    """Параметры сборки датасета"""

    patch_size: int = 64
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD
    median_filter: bool = True
    filter_before_median: bool = True
    test_fraction: float = 0.2
    batch_size: int = 16
    seed: int = 0
    jobs: int = 1


def build_dataset(dataset_id: str, entries: Sequence[CatalogEntry],
                  chart_for: Callable[[CatalogEntry], ConcentrationChart],
                  out_root: Union[str, Path], options: DatasetBuildOptions,
                  progress: bool = False) -> Dict[str, object]:
    """
    Собирает, фильтрует, сглаживает, делит и упаковывает датасет

    Args:
        dataset_id: Идентификатор датасета ("N", "S", ...)
        entries: Элементы каталога
        chart_for: Функция, возвращающая карту концентрации для элемента
        out_root: Корневая папка датасетов
        options: Параметры сборки
        progress: Показывать ли индикатор прогресса

    Returns:
        Сводка сборки (также записывается в summary.yaml)
    """
    if not 0.0 <= options.test_fraction < 1.0:
        raise ConfigError(f"test fraction must be in [0, 1), got {options.test_fraction}")
    size = options.patch_size

    def build(entry: CatalogEntry) -> Sample:
        return build_sample(entry, chart_for(entry), size, size)

    with ThreadPoolExecutor(max_workers=max(1, options.jobs)) as pool:
        samples = list(tqdm(pool.map(build, entries), total=len(entries), disable=not progress,
                            desc=f"samples {dataset_id}"))

    audit = audit_pass_directions(entries)
    corrected = int(audit["needs_correction"].sum()) if len(audit) else 0
    if corrected:
        logger.warning(f"⚠️ Исправлена ориентация {corrected} снимков с ошибочным направлением прохода")

    def smooth(items: List[Sample]) -> List[Sample]:
        if not options.median_filter:
            return items
        return [Sample(s.image, smooth_label(s.label), s.source_id) for s in items]

    if options.filter_before_median:
        kept, rejected = variance_filter(samples, options.variance_threshold)
        kept = smooth(kept)
    else:
        kept, rejected = variance_filter(smooth(samples), options.variance_threshold)
    logger.info(f"Фильтр дисперсии: сохранено {len(kept)}, отклонено {len(rejected)} "
                f"(порог {options.variance_threshold})")

    order = make_rng(options.seed, f"split-{dataset_id}").permutation(len(kept))
    n_test = int(round(options.test_fraction * len(kept)))
    test = [kept[i] for i in sorted(order[:n_test])]
    train = [kept[i] for i in sorted(order[n_test:])]

    base = Path(out_root) / dataset_id
    for split in ("train", "test"):
        for old in (base / split).glob(f"*{BATCH_SUFFIX}"):
            old.unlink()
    train_paths = pack_batches(train, options.batch_size, base / "train")
    test_paths = pack_batches(test, options.batch_size, base / "test")

    summary = {
        "dataset_id": dataset_id,
        "entries": len(entries),
        "kept": len(kept),
        "rejected": len(rejected),
        "variance_threshold": options.variance_threshold,
        "median_filter": options.median_filter,
        "filter_before_median": options.filter_before_median,
        "corrected_orientation": corrected,
        "train_samples": len(train),
        "test_samples": len(test),
        "train_batches": len(train_paths),
        "test_batches": len(test_paths),
        "batch_size": options.batch_size,
        "patch_size": size,
    }
    with open(base / "summary.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(summary, f, sort_keys=False, allow_unicode=True)
    return summary


def load_charts_lookup(catalog_dir: Union[str, Path]) -> Callable[[CatalogEntry], ConcentrationChart]:
    """Возвращает функцию чтения карты элемента каталога из папки charts/"""
    charts_dir = Path(catalog_dir) / "charts"

    def chart_for(entry: CatalogEntry) -> ConcentrationChart:
        path = charts_dir / f"{entry.id}.sicr"
        try:
            return raster_io.read_chart(path)
        except OSError as e:
            raise GeometryError(f"no chart for entry {entry.id}: {e}") from e

    return chart_for
