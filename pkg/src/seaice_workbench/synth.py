"""
Генератор синтетических данных

Заменяет реальные источники (SAR-снимки, карты PMW-концентрации,
натурные наблюдения) детерминированными синтетическими аналогами:
- Истинное поле концентрации с кромкой льда
- Двухканальное SAR-подобное изображение со спеклом
- Грубая зашумлённая карта концентрации с неопределённостью
- Каталог снимков с намеренно перепутанным направлением прохода
- Геопривязанные натурные наблюдения
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from . import raster_io
from .errors import GeometryError
from .geogrid import (
    ConcentrationChart,
    Footprint,
    GeoPoint,
    Hemisphere,
    PassDirection,
    PlanePoint,
    bilinear_at,
    correct_quicklook_orientation,
    footprint_from_plane,
    footprint_lattice,
    point_in_polygon,
    reconcile_pass_direction,
    stereo_forward,
    stereo_inverse_arrays,
)
from .seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

# Значения по умолчанию
DEFAULT_U_MIN = 0.05
DEFAULT_U_MAX = 0.5
DEFAULT_LOOKS = 4
MAX_HEADING_JITTER_DEG = 15.0


@dataclass
class SceneTruth:
    """
    Истинное поле концентрации сцены

    Пиксель (r, c) имеет центр (origin.x + c*spacing, origin.y - r*spacing).
    """

    field: np.ndarray
    footprint: Footprint
    timestamp: datetime
    origin: PlanePoint
    spacing: float
    hemisphere: Hemisphere

    def __post_init__(self):
        values = np.asarray(self.field, dtype=np.float64)
        if values.ndim != 2:
            raise GeometryError(f"truth field must be 2-dimensional, got {values.shape}")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise GeometryError("truth values must lie in [0, 1]")
        self.field = values

    @property
    def shape(self) -> Tuple[int, int]:
        return self.field.shape

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Координаты центров пикселей на плоскости, массивы (H, W)"""
        h, w = self.shape
        cols, rows = np.meshgrid(np.arange(w), np.arange(h))
        return self.origin.x + cols * self.spacing, self.origin.y - rows * self.spacing


@dataclass
class CatalogEntry:
    """Элемент каталога снимков"""

    id: str
    timestamp: datetime
    footprint: Footprint
    reported_direction: PassDirection
    image_path: str
    # Известен только генератору, потребители конвейера его не читают
    mislabeled: bool = field(default=False, repr=False, compare=False)


@dataclass(frozen=True)
class InSituObservation:
    """Натурное наблюдение концентрации льда"""

    location: GeoPoint
    timestamp: datetime
    observed_concentration: float

    def __post_init__(self):
        if not 0.0 <= self.observed_concentration <= 1.0:
            raise GeometryError(f"observed concentration out of [0, 1]: {self.observed_concentration}")


@dataclass(frozen=True)
class Region:
    """Географический прямоугольник для размещения сцен"""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise GeometryError(f"empty region: {self}")
        if self.lat_min < 0 < self.lat_max:
            raise GeometryError(f"region must not cross the equator: {self}")
        if abs(self.lat_min) > 90 or abs(self.lat_max) > 90:
            raise GeometryError(f"region latitude out of range: {self}")

    @property
    def hemisphere(self) -> Hemisphere:
        return Hemisphere.SOUTH if self.lat_max <= 0 else Hemisphere.NORTH


@dataclass
class SceneParams:
    """Параметры генерации одной сцены"""

    scene_size: int = 128
    patch_size: int = 64
    spacing_km: float = 1.25
    coarse_factor: int = 8
    footprint_fraction: float = 0.5
    edge_sharpness: float = 12.0
    looks: int = DEFAULT_LOOKS
    speckle: bool = True
    chart_noise: bool = True
    u_min: float = DEFAULT_U_MIN
    u_max: float = DEFAULT_U_MAX


# --- Поле концентрации -----------------------------------------------------

def _normalized_axis(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.arange(n, dtype=float) / (n - 1) - 0.5


def _local_frame(center_xy: np.ndarray, hemisphere: Hemisphere) -> Tuple[np.ndarray, np.ndarray]:
    """Единичные векторы «север» и «восток» в точке плоскости"""
    rho = np.hypot(*center_xy)
    if rho == 0:
        north = np.array([0.0, 1.0])
    elif hemisphere is Hemisphere.SOUTH:
        north = center_xy / rho
    else:
        north = -center_xy / rho
    east = np.array([north[1], -north[0]])
    return north, east


def scene_footprint(center: GeoPoint, hemisphere: Hemisphere, half_side_km: float,
                    direction: PassDirection, heading_jitter_deg: float = 0.0) -> Footprint:
    """
    Квадратный контур снимка вокруг центра сцены

    Args:
        center: Центр сцены
        hemisphere: Полушарие проекции
        half_side_km: Половина стороны квадрата, км
        direction: Направление прохода (определяет порядок углов)
        heading_jitter_deg: Поворот контура относительно местного меридиана

    Returns:
        Контур, углы в порядке спутниковой системы отсчёта
    """
    c = stereo_forward(center, hemisphere)
    c_xy = np.array([c.x, c.y])
    north, east = _local_frame(c_xy, hemisphere)
    angle = np.radians(heading_jitter_deg)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    north, east = rot @ north, rot @ east
    n, e = half_side_km * north, half_side_km * east
    if direction is PassDirection.ASCENDING:
        corners = [c_xy + n - e, c_xy + n + e, c_xy - n + e, c_xy - n - e]
    else:
        # Спутник смотрит на юг: верхний левый угол - юго-восточный
        corners = [c_xy - n + e, c_xy - n - e, c_xy + n - e, c_xy + n + e]
    return footprint_from_plane(corners, hemisphere, direction)


def gen_truth_field(seed: int, h: int, w: int, edge_sharpness: float, edge_position: float = 0.5, *,
                    center: Optional[GeoPoint] = None, spacing_km: float = 1.25,
                    timestamp: Optional[datetime] = None,
                    direction: PassDirection = PassDirection.ASCENDING,
                    footprint_fraction: float = 0.5, meander: float = 0.05) -> SceneTruth:
    """
    Генерирует истинное поле концентрации с кромкой льда

    Логистический переход поперёк случайно ориентированной линии, кромка
    слегка извивается низкочастотным возмущением.

    Args:
        seed: Seed генерации
        h: Высота поля, пиксели
        w: Ширина поля, пиксели
        edge_sharpness: Крутизна перехода (в обратных ширинах сцены)
        edge_position: Положение кромки вдоль нормали, доля [0, 1]
        center: Центр сцены (по умолчанию 65°S 0°E)
        spacing_km: Размер пикселя, км
        timestamp: Время съёмки (по умолчанию 2019-07-01 UTC)
        direction: Истинное направление прохода
        footprint_fraction: Доля сцены, занимаемая контуром снимка
        meander: Амплитуда извивания кромки

    Returns:
        SceneTruth
    """
    if h <= 0 or w <= 0:
        raise GeometryError(f"field size must be positive, got {h}x{w}")
    if not edge_sharpness > 0:
        raise GeometryError(f"edge sharpness must be positive, got {edge_sharpness}")
    center = center or GeoPoint(-65.0, 0.0)
    timestamp = timestamp or datetime(2019, 7, 1, tzinfo=timezone.utc)
    hemisphere = Hemisphere.SOUTH if center.lat < 0 else Hemisphere.NORTH
    rng = make_rng(seed, "truth")

    yy, xx = np.meshgrid(_normalized_axis(h), _normalized_axis(w), indexing="ij")
    phi = rng.uniform(0.0, 2.0 * np.pi)
    along = np.cos(phi) * xx + np.sin(phi) * yy
    tangent = -np.sin(phi) * xx + np.cos(phi) * yy

    wobble = np.zeros_like(along)
    for _ in range(3):
        freq = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wobble += (meander / 3.0) * np.sin(2.0 * np.pi * freq * tangent + phase)

    with np.errstate(over="ignore"):
        values = expit(edge_sharpness * (along - (edge_position - 0.5) + wobble))
    values = np.clip(values, 0.0, 1.0)

    c = stereo_forward(center, hemisphere)
    origin = PlanePoint(c.x - (w - 1) / 2.0 * spacing_km, c.y + (h - 1) / 2.0 * spacing_km)
    half_side = footprint_fraction * (min(h, w) - 1) * spacing_km / 2.0
    jitter = rng.uniform(-MAX_HEADING_JITTER_DEG, MAX_HEADING_JITTER_DEG)
    footprint = scene_footprint(center, hemisphere, max(half_side, 1e-3), direction, jitter)
    return SceneTruth(values, footprint, timestamp, origin, spacing_km, hemisphere)


# --- SAR-изображение ---------------------------------------------------------

def backscatter_model(concentration: np.ndarray) -> np.ndarray:
    """Безшумовое отображение концентрации в два канала (ко- и кросс-поляризация)"""
    c = np.clip(concentration, 0.0, 1.0)
    co_pol = 0.08 + 0.32 * c
    cross_pol = 0.02 + 0.18 * np.sqrt(c)
    return np.stack([co_pol, cross_pol], axis=-1)


def render_sar(truth: SceneTruth, seed: int, looks: int = DEFAULT_LOOKS, speckle: bool = True) -> np.ndarray:
    """
    Рендерит двухканальное SAR-подобное изображение

    Каждый канал - монотонная функция концентрации, умноженная на спекл
    (гамма-распределение с единичным средним, форма looks).

    Args:
        truth: Истинное поле
        seed: Seed шума
        looks: Число некогерентных накоплений
        speckle: Добавлять ли спекл

    Returns:
        Изображение H×W×2 в [0, 1]
    """
    image = backscatter_model(truth.field)
    if speckle:
        rng = make_rng(seed, "speckle")
        image = image * rng.gamma(shape=looks, scale=1.0 / looks, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def extract_quicklook(sar: np.ndarray, truth: SceneTruth, out_h: int, out_w: int) -> np.ndarray:
    """Выборка изображения сцены на решётке контура снимка (система отсчёта спутника)"""
    xs, ys = footprint_lattice(truth.footprint.plane_corners(truth.hemisphere), out_h, out_w)
    rows = (truth.origin.y - ys) / truth.spacing
    cols = (xs - truth.origin.x) / truth.spacing
    return np.clip(bilinear_at(sar, rows, cols), 0.0, 1.0)


# --- Грубая карта ------------------------------------------------------------

def gen_pmw_chart(truth: SceneTruth, coarse_factor: int, seed: int, u_min: float = DEFAULT_U_MIN,
                  u_max: float = DEFAULT_U_MAX, noise: bool = True) -> ConcentrationChart:
    """
    Генерирует грубую карту концентрации с неопределённостью

    Концентрация - блочное среднее истинного поля плюс шум с СКО, равным
    неопределённости. Неопределённость растёт с дисперсией блока, поэтому
    максимальна у кромки льда.

    Args:
        truth: Истинное поле
        coarse_factor: Коэффициент огрубления (делит H и W)
        seed: Seed шума
        u_min: Неопределённость однородных блоков
        u_max: Неопределённость блоков с максимальной дисперсией
        noise: Добавлять ли шум к концентрации

    Returns:
        ConcentrationChart
    """
    h, w = truth.shape
    f = int(coarse_factor)
    if f < 2 or h % f or w % f:
        raise GeometryError(f"coarse factor {coarse_factor} must be >= 2 and divide {h}x{w}")
    blocks = truth.field.reshape(h // f, f, w // f, f)
    means = blocks.mean(axis=(1, 3))
    variances = blocks.var(axis=(1, 3))
    max_var = variances.max()
    if max_var > 0:
        uncertainty = u_min + (u_max - u_min) * (variances / max_var)
    else:
        uncertainty = np.full_like(means, u_min)
    concentration = means
    if noise:
        rng = make_rng(seed, "pmw-noise")
        concentration = means + rng.standard_normal(means.shape) * uncertainty
    grid = np.stack([np.clip(concentration, 0.0, 1.0), np.clip(uncertainty, 0.0, 1.0)], axis=-1)
    offset = (f - 1) / 2.0 * truth.spacing
    origin = PlanePoint(truth.origin.x + offset, truth.origin.y - offset)
    return ConcentrationChart(grid, origin, f * truth.spacing, truth.hemisphere, truth.timestamp)


# --- Каталог -------------------------------------------------------------------

def orbit_pass_direction(timestamp: datetime, lon: float) -> PassDirection:
    """
    Направление прохода солнечно-синхронной орбиты «рассвет–закат»

    Восходящий проход - в вечерней половине местных солнечных суток.
    """
    hours = timestamp.hour + timestamp.minute / 60.0 + timestamp.second / 3600.0
    local_solar = (hours + lon / 15.0) % 24.0
    return PassDirection.ASCENDING if local_solar >= 12.0 else PassDirection.DESCENDING


def _as_utc_datetime(value: Union[date, datetime]) -> datetime:
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    return datetime.combine(value, time(0, 0), tzinfo=timezone.utc)


def write_truth(path: Union[str, Path], truth: SceneTruth, **extra) -> Path:
    """Записывает истинное поле в служебный файл с тегом "truth" """
    corners = [[c.lat, c.lon] for c in truth.footprint.corners]
    metadata: Dict[str, Any] = {
        "origin_x": truth.origin.x,
        "origin_y": truth.origin.y,
        "spacing": truth.spacing,
        "hemisphere": truth.hemisphere.value,
        "timestamp": truth.timestamp.isoformat(),
        "corners": corners,
        "direction": truth.footprint.reported_direction.value,
    }
    metadata.update(extra)
    return raster_io.write_raster(path, truth.field, tag="truth", dtype="<f8", metadata=metadata)


def read_truth(path: Union[str, Path]) -> Tuple[SceneTruth, Dict[str, Any]]:
    """Читает служебный файл истинного поля"""
    values, meta = raster_io.read_raster(path, expected_tag="truth")
    corners = tuple(GeoPoint(lat, lon) for lat, lon in meta["corners"])
    truth = SceneTruth(
        field=values,
        footprint=Footprint(corners, PassDirection.parse(meta["direction"])),
        timestamp=datetime.fromisoformat(meta["timestamp"]),
        origin=PlanePoint(meta["origin_x"], meta["origin_y"]),
        spacing=meta["spacing"],
        hemisphere=Hemisphere.parse(meta["hemisphere"]),
    )
    return truth, meta


def catalog_layout(out_dir: Union[str, Path], entry_id: str) -> Dict[str, Path]:
    """Пути файлов элемента каталога"""
    out_dir = Path(out_dir)
    return {
        "image": out_dir / "images" / f"{entry_id}.sicr",
        "chart": out_dir / "charts" / f"{entry_id}.sicr",
        "truth": out_dir / "truth" / f"{entry_id}.sicr",
    }


def _generate_entry(seed: int, index: int, region: Region, start: datetime, span_s: float,
                    params: SceneParams, mislabel: bool, out_dir: Path) -> CatalogEntry:
    sub_seed = derive_seed(seed, f"entry-{index}")
    rng = make_rng(sub_seed, "placement")
    lat = rng.uniform(region.lat_min, region.lat_max)
    lon = rng.uniform(region.lon_min, region.lon_max)
    timestamp = start + timedelta(seconds=int(rng.uniform(0.0, span_s)))
    direction = orbit_pass_direction(timestamp, lon)

    truth = gen_truth_field(
        sub_seed, params.scene_size, params.scene_size, params.edge_sharpness,
        edge_position=rng.uniform(0.25, 0.75), center=GeoPoint(lat, lon),
        spacing_km=params.spacing_km, timestamp=timestamp, direction=direction,
        footprint_fraction=params.footprint_fraction,
    )
    sar = render_sar(truth, sub_seed, looks=params.looks, speckle=params.speckle)
    image = extract_quicklook(sar, truth, params.patch_size, params.patch_size)
    chart = gen_pmw_chart(truth, params.coarse_factor, sub_seed, params.u_min, params.u_max,
                          noise=params.chart_noise)

    reported = direction.flipped() if mislabel else direction
    if mislabel:
        # Ошибка предобработки: изображение обработано для противоположного прохода
        stored = correct_quicklook_orientation(image, reconcile_pass_direction(reported, direction))
    else:
        stored = image

    entry_id = f"S1X_{region.hemisphere.code}_{index:05d}"
    paths = catalog_layout(out_dir, entry_id)
    raster_io.write_image(paths["image"], stored, entry_id=entry_id)
    raster_io.write_chart(paths["chart"], chart)
    write_truth(paths["truth"], truth, entry_id=entry_id, mislabeled=bool(mislabel),
                reported_direction=reported.value)
    return CatalogEntry(
        id=entry_id,
        timestamp=timestamp,
        footprint=truth.footprint.with_direction(reported),
        reported_direction=reported,
        image_path=str(paths["image"]),
        mislabeled=bool(mislabel),
    )


def gen_catalog(seed: int, n_entries: int, region: Region, date_range: Tuple[date, date],
                mislabel_rate: float, out_dir: Union[str, Path], params: Optional[SceneParams] = None,
                jobs: int = 1, progress: bool = False) -> List[CatalogEntry]:
    """
    Генерирует каталог снимков и записывает файлы изображений, карт и истины

    Ровно round(mislabel_rate * n_entries) элементов получают перепутанное
    направление прохода и изображение, повёрнутое на 180°.

    Args:
        seed: Основной seed
        n_entries: Число элементов
        region: Область размещения сцен
        date_range: Диапазон дат (включительно)
        mislabel_rate: Доля элементов с ошибкой направления
        out_dir: Папка каталога
        params: Параметры сцен
        jobs: Число потоков генерации
        progress: Показывать ли индикатор прогресса

    Returns:
        Список элементов каталога в порядке индексов
    """
    if n_entries <= 0:
        raise GeometryError(f"n_entries must be positive, got {n_entries}")
    if not 0.0 <= mislabel_rate <= 1.0:
        raise GeometryError(f"mislabel_rate must be in [0, 1], got {mislabel_rate}")
    start = _as_utc_datetime(date_range[0])
    end = _as_utc_datetime(date_range[1]) + timedelta(days=1)
    if end <= start:
        raise GeometryError(f"inverted date range: {date_range[0]} > {date_range[1]}")
    params = params or SceneParams()
    out_dir = Path(out_dir)

    n_flip = int(round(mislabel_rate * n_entries))
    flipped = set(make_rng(seed, "mislabel").permutation(n_entries)[:n_flip].tolist())
    span_s = (end - start).total_seconds()

    def build(i: int) -> CatalogEntry:
        return _generate_entry(seed, i, region, start, span_s, params, i in flipped, out_dir)

    indices = range(n_entries)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        entries = list(tqdm(pool.map(build, indices), total=n_entries, disable=not progress,
                            desc=f"catalog {region.hemisphere.code}"))
    logger.info(f"Сгенерировано {len(entries)} снимков, с ошибкой направления: {n_flip}")
    return entries


# --- Натурные наблюдения -------------------------------------------------------

def gen_insitu_observations(seed: int, truth: SceneTruth, n: int,
                            observation_noise_sd: float) -> List[InSituObservation]:
    """
    Генерирует натурные наблюдения внутри контура снимка

    Точки наблюдения совпадают с центрами пикселей истинного поля.

    Args:
        seed: Seed генерации
        truth: Истинное поле
        n: Число наблюдений
        observation_noise_sd: СКО шума наблюдения

    Returns:
        Список наблюдений
    """
    if n <= 0:
        raise GeometryError(f"n must be positive, got {n}")
    if observation_noise_sd < 0:
        raise GeometryError(f"noise sd must be non-negative, got {observation_noise_sd}")
    rng = make_rng(seed, "insitu")
    xs, ys = truth.pixel_centers()
    polygon = truth.footprint.plane_corners(truth.hemisphere)
    candidates = np.flatnonzero(point_in_polygon(xs, ys, polygon))
    if candidates.size == 0:
        raise GeometryError("footprint contains no truth pixels")

    picked = rng.choice(candidates, size=n, replace=True)
    values = truth.field.ravel()[picked]
    if observation_noise_sd > 0:
        values = values + rng.normal(0.0, observation_noise_sd, size=n)
    values = np.clip(values, 0.0, 1.0)
    lats, lons = stereo_inverse_arrays(xs.ravel()[picked], ys.ravel()[picked], truth.hemisphere)
    return [
        InSituObservation(GeoPoint(float(la), float(lo)), truth.timestamp, float(v))
        for la, lo, v in zip(lats, lons, values)
    ]
