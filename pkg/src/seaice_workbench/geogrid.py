"""
Геометрия сеток и снимков

Предоставляет функциональность для:
- Полярной стереографической проекции (сферическая Земля, R = 6371 км)
- Описания контура снимка и определения направления прохода спутника
- Исправления ориентации quicklook-изображений
- Пересэмплирования грубой карты концентрации на контур снимка
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import ChartCoverageError, DegenerateFootprintError, GeometryError, ProjectionError

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0

# Допуск выхода точки за крайние центры ячеек карты (в долях ячейки)
COVERAGE_TOLERANCE = 1e-9
# Допуск равенства широт углов 0 и 3
DIRECTION_TOLERANCE_DEG = 1e-9


class Hemisphere(Enum):
    """Полушарие (полюс проекции)"""

    NORTH = "NORTH"
    SOUTH = "SOUTH"

    @property
    def code(self) -> str:
        return self.value[0]

    @classmethod
    def parse(cls, value) -> "Hemisphere":
        """Принимает 'N', 'S', 'north', 'SOUTH' и экземпляры Hemisphere"""
        if isinstance(value, Hemisphere):
            return value
        text = str(value).strip().upper()
        for member in cls:
            if text in (member.value, member.code):
                return member
        raise GeometryError(f"unknown hemisphere: {value!r}")


class PassDirection(Enum):
    """Направление прохода спутника"""

    ASCENDING = "ASCENDING"
    DESCENDING = "DESCENDING"

    def flipped(self) -> "PassDirection":
        if self is PassDirection.ASCENDING:
            return PassDirection.DESCENDING
        return PassDirection.ASCENDING

    @classmethod
    def parse(cls, value) -> "PassDirection":
        if isinstance(value, PassDirection):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise GeometryError(f"unknown pass direction: {value!r}") from None


def normalize_lon(lon):
    """Приводит долготу (скаляр или массив) к интервалу (-180, 180]"""
    lon = np.asarray(lon, dtype=float)
    # Значения внутри интервала не трогаем: (x + 180) - 180 != x при округлении
    in_range = (lon > -180.0) & (lon <= 180.0)
    wrapped = np.where(in_range, lon, np.mod(lon + 180.0, 360.0) - 180.0)
    wrapped = np.where(wrapped == -180.0, 180.0, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class GeoPoint:
    """Географическая точка в градусах"""

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if not (np.isfinite(lat) and np.isfinite(lon)):
            raise GeometryError(f"non-finite coordinates: ({self.lat}, {self.lon})")
        if abs(lat) > 90.0:
            raise GeometryError(f"latitude out of range: {lat}")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(lon))


@dataclass(frozen=True)
class PlanePoint:
    """Точка на плоскости проекции, км"""

    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise GeometryError(f"non-finite plane point: ({self.x}, {self.y})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class Footprint:
    """
    Контур снимка: 4 угла в порядке спутниковой системы отсчёта
    [0] верхний левый, [1] верхний правый, [2] нижний правый, [3] нижний левый
    """

    corners: Tuple[GeoPoint, GeoPoint, GeoPoint, GeoPoint]
    reported_direction: PassDirection

    def __post_init__(self):
        corners = tuple(self.corners)
        if len(corners) != 4:
            raise DegenerateFootprintError(f"footprint needs exactly 4 corners, got {len(corners)}")
        for i in range(4):
            for j in range(i + 1, 4):
                if corners[i].lat == corners[j].lat and corners[i].lon == corners[j].lon:
                    raise DegenerateFootprintError(f"degenerate footprint: corners {i} and {j} coincide")
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "reported_direction", PassDirection.parse(self.reported_direction))

    @property
    def hemisphere(self) -> Hemisphere:
        mean_lat = sum(c.lat for c in self.corners) / 4.0
        return Hemisphere.SOUTH if mean_lat < 0 else Hemisphere.NORTH

    def plane_corners(self, hemisphere: Optional[Hemisphere] = None) -> np.ndarray:
        """Углы контура на плоскости проекции, массив (4, 2)"""
        hemisphere = hemisphere or self.hemisphere
        lats = np.array([c.lat for c in self.corners])
        lons = np.array([c.lon for c in self.corners])
        x, y = stereo_forward_arrays(lats, lons, hemisphere)
        return np.stack([x, y], axis=1)

    def with_direction(self, direction: PassDirection) -> "Footprint":
        return Footprint(self.corners, direction)


@dataclass
class ConcentrationChart:
    """
    Грубая карта концентрации льда с неопределённостью

    Ячейка (r, c) имеет центр (origin.x + c*spacing, origin.y - r*spacing):
    столбцы идут вдоль +x, строки вдоль -y.
    """

    grid: np.ndarray
    origin: PlanePoint
    spacing: float
    hemisphere: Hemisphere
    timestamp: Optional[datetime] = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[2] != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise GeometryError(f"chart grid must be (rows, cols, 2), got {grid.shape}")
        if not np.all((grid >= 0.0) & (grid <= 1.0)):
            raise GeometryError("chart values must lie in [0, 1]")
        if not self.spacing > 0:
            raise GeometryError(f"chart spacing must be positive, got {self.spacing}")
        self.grid = grid
        self.spacing = float(self.spacing)
        self.hemisphere = Hemisphere.parse(self.hemisphere)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape[0], self.grid.shape[1]

    @property
    def concentration(self) -> np.ndarray:
        return self.grid[..., 0]

    @property
    def uncertainty(self) -> np.ndarray:
        return self.grid[..., 1]

    def fractional_index(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        """Переводит координаты плоскости в дробные индексы (строка, столбец)"""
        rows = (self.origin.y - np.asarray(y, dtype=float)) / self.spacing
        cols = (np.asarray(x, dtype=float) - self.origin.x) / self.spacing
        return rows, cols

    def covers(self, x, y) -> np.ndarray:
        """Маска точек, лежащих между крайними центрами ячеек"""
        rows, cols = self.fractional_index(x, y)
        n_rows, n_cols = self.shape
        return (
            (rows >= -COVERAGE_TOLERANCE) & (rows <= n_rows - 1 + COVERAGE_TOLERANCE)
            & (cols >= -COVERAGE_TOLERANCE) & (cols <= n_cols - 1 + COVERAGE_TOLERANCE)
        )


@dataclass
class LabelPatch:
    """Метка H×W×2: канал 0 - концентрация, канал 1 - неопределённость"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise GeometryError(f"label patch must be (H, W, 2), got {data.shape}")
        if not np.all((data >= 0.0) & (data <= 1.0)):
            raise GeometryError("label values must lie in [0, 1]")
        self.data = data

    @property
    def concentration(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def uncertainty(self) -> np.ndarray:
        return self.data[..., 1]


@dataclass(frozen=True)
class Reconciliation:
    """Результат сверки заявленного и вычисленного направлений прохода"""

    reported: PassDirection
    derived: PassDirection
    consistent: bool = field(init=False)
    needs_correction: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "consistent", self.reported == self.derived)
        object.__setattr__(self, "needs_correction", self.reported != self.derived)


# --- Проекция -------------------------------------------------------------

def _colatitude_deg(lat, hemisphere: Hemisphere):
    if hemisphere is Hemisphere.NORTH:
        return 90.0 - lat
    return 90.0 + lat


def stereo_forward_arrays(lat, lon, hemisphere: Hemisphere) -> Tuple[np.ndarray, np.ndarray]:
    """
    Векторная полярная стереографическая проекция

    Args:
        lat: Широты, градусы
        lon: Долготы, градусы
        hemisphere: Полушарие, полюс которого является полюсом проекции

    Returns:
        Кортеж массивов (x, y) в км
    """
    hemisphere = Hemisphere.parse(hemisphere)
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    theta = np.radians(_colatitude_deg(lat, hemisphere))
    if np.any(np.abs(theta - np.pi) <= 1e-12):
        raise ProjectionError("antipodal point unprojectable")
    rho = 2.0 * EARTH_RADIUS_KM * np.tan(theta / 2.0)
    lam = np.radians(lon)
    x = rho * np.sin(lam)
    if hemisphere is Hemisphere.NORTH:
        y = -rho * np.cos(lam)
    else:
        y = rho * np.cos(lam)
    return x, y


def stereo_inverse_arrays(x, y, hemisphere: Hemisphere) -> Tuple[np.ndarray, np.ndarray]:
    """Обратная векторная проекция: (x, y) км -> (широта, долгота) градусы"""
    hemisphere = Hemisphere.parse(hemisphere)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rho = np.hypot(x, y)
    colat = np.degrees(2.0 * np.arctan(rho / (2.0 * EARTH_RADIUS_KM)))
    if hemisphere is Hemisphere.NORTH:
        lat = 90.0 - colat
        lon = np.degrees(np.arctan2(x, -y))
    else:
        lat = colat - 90.0
        lon = np.degrees(np.arctan2(x, y))
    return lat, normalize_lon(lon)


def stereo_forward(p: GeoPoint, hemisphere: Hemisphere) -> PlanePoint:
    """
    Проецирует географическую точку на плоскость

    Args:
        p: Точка
        hemisphere: Полушарие проекции

    Returns:
        Точка плоскости в км
    """
    x, y = stereo_forward_arrays(p.lat, p.lon, hemisphere)
    return PlanePoint(float(x), float(y))


def stereo_inverse(q: PlanePoint, hemisphere: Hemisphere) -> GeoPoint:
    """Обратное преобразование к stereo_forward"""
    lat, lon = stereo_inverse_arrays(q.x, q.y, hemisphere)
    # Ошибки округления у полюса
    lat = float(np.clip(lat, -90.0, 90.0))
    return GeoPoint(lat, float(lon))


# --- Направление прохода --------------------------------------------------

def derive_pass_direction(f: Footprint) -> PassDirection:
    """
    Определяет фактическое направление прохода по контуру снимка

    Спутник смотрел на север (ASCENDING), если широта угла 0 больше широты угла 3.

    Args:
        f: Контур снимка

    Returns:
        Вычисленное направление прохода
    """
    lat0 = f.corners[0].lat
    lat3 = f.corners[3].lat
    if abs(lat0 - lat3) <= DIRECTION_TOLERANCE_DEG:
        raise DegenerateFootprintError("degenerate footprint: indeterminate pass direction")
    return PassDirection.ASCENDING if lat0 > lat3 else PassDirection.DESCENDING


def reconcile_pass_direction(reported: PassDirection, derived: PassDirection) -> Reconciliation:
    """Сверяет заявленное направление с вычисленным"""
    return Reconciliation(PassDirection.parse(reported), PassDirection.parse(derived))


def correct_quicklook_orientation(image: np.ndarray, r: Reconciliation) -> np.ndarray:
    """
    Исправляет ориентацию quicklook-изображения

    При несогласованных направлениях изображение поворачивается на 180°
    (обе пространственные оси развёрнуты, каналы не трогаются).
    """
    if not r.needs_correction:
        return image
    return np.ascontiguousarray(np.asarray(image)[::-1, ::-1])


# --- Контуры и пересэмплирование -----------------------------------------

def _lattice_fractions(n: int) -> np.ndarray:
    if n == 1:
        return np.array([0.5])
    return np.arange(n, dtype=float) / (n - 1)


def footprint_lattice(corners_xy: np.ndarray, out_h: int, out_w: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Решётка пикселей внутри контура билинейной интерполяцией углов

    Args:
        corners_xy: Углы контура на плоскости, (4, 2) в порядке TL, TR, BR, BL
        out_h: Высота решётки
        out_w: Ширина решётки

    Returns:
        Массивы x, y формы (out_h, out_w)
    """
    if out_h <= 0 or out_w <= 0:
        raise GeometryError(f"output size must be positive, got {out_h}x{out_w}")
    p0, p1, p2, p3 = np.asarray(corners_xy, dtype=float)
    u = _lattice_fractions(out_h)[:, None, None]
    v = _lattice_fractions(out_w)[None, :, None]
    pos = (1 - u) * (1 - v) * p0 + (1 - u) * v * p1 + u * v * p2 + u * (1 - v) * p3
    return pos[..., 0], pos[..., 1]


def sample_chart(chart: ConcentrationChart, x, y, strict: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Билинейная выборка карты в точках плоскости

    Args:
        chart: Карта концентрации
        x: Координаты x, км
        y: Координаты y, км
        strict: Бросать ли ChartCoverageError для точек вне покрытия

    Returns:
        Кортеж (значения формы x.shape + (2,), маска покрытия)
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = chart.covers(x, y)
    if strict and not np.all(inside):
        raise ChartCoverageError("footprint exceeds chart coverage")
    rows, cols = chart.fractional_index(x, y)
    values = bilinear_at(chart.grid, rows, cols)
    return np.clip(values, 0.0, 1.0), inside


def bilinear_at(grid: np.ndarray, rows, cols) -> np.ndarray:
    """
    Билинейная интерполяция многоканального растра в дробных индексах

    Индексы вне растра прижимаются к краю; проверка покрытия - забота вызывающего.

    Args:
        grid: Растр (R, C, K)
        rows: Дробные индексы строк
        cols: Дробные индексы столбцов

    Returns:
        Значения формы rows.shape + (K,)
    """
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    n_rows, n_cols, n_channels = grid.shape
    coords = np.stack([np.clip(rows, 0, n_rows - 1).ravel(), np.clip(cols, 0, n_cols - 1).ravel()])
    channels = [
        ndimage.map_coordinates(grid[..., k], coords, order=1, mode="nearest")
        for k in range(n_channels)
    ]
    return np.stack(channels, axis=-1).reshape(rows.shape + (n_channels,))


def resample_chart_to_footprint(chart: ConcentrationChart, f: Footprint, out_h: int, out_w: int) -> LabelPatch:
    """
    Пересэмплирует карту концентрации на контур снимка

    Каждый пиксель патча размещается билинейной интерполяцией четырёх углов
    контура, затем значение берётся билинейно из четырёх соседних центров ячеек.

    Args:
        chart: Карта концентрации
        f: Контур снимка
        out_h: Высота патча
        out_w: Ширина патча

    Returns:
        Патч метки (концентрация, неопределённость)
    """
    xs, ys = footprint_lattice(f.plane_corners(chart.hemisphere), out_h, out_w)
    values, _ = sample_chart(chart, xs, ys, strict=True)
    return LabelPatch(values)


def point_in_polygon(px, py, polygon: np.ndarray) -> np.ndarray:
    """
    Проверка принадлежности точек многоугольнику по правилу чёт-нечет

    Args:
        px: Координаты x точек
        py: Координаты y точек
        polygon: Вершины многоугольника (n, 2)

    Returns:
        Булев массив формы px.shape
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_cross)
    return inside


def footprint_contains(f: Footprint, p: GeoPoint) -> bool:
    """Лежит ли точка внутри контура (в координатах плоскости проекции)"""
    hemisphere = f.hemisphere
    try:
        x, y = stereo_forward_arrays(p.lat, p.lon, hemisphere)
    except ProjectionError:
        return False
    return bool(point_in_polygon(x, y, f.plane_corners(hemisphere)))


def footprint_centroid(f: Footprint) -> GeoPoint:
    """Центр контура (среднее углов на плоскости)"""
    hemisphere = f.hemisphere
    cx, cy = f.plane_corners(hemisphere).mean(axis=0)
    return stereo_inverse(PlanePoint(cx, cy), hemisphere)


def footprint_from_plane(corners_xy: Sequence[Sequence[float]], hemisphere: Hemisphere,
                         direction: PassDirection) -> Footprint:
    """Строит контур из углов на плоскости"""
    corners_xy = np.asarray(corners_xy, dtype=float)
    lats, lons = stereo_inverse_arrays(corners_xy[:, 0], corners_xy[:, 1], hemisphere)
    corners = tuple(GeoPoint(float(la), float(lo)) for la, lo in zip(lats, lons))
    return Footprint(corners, direction)
