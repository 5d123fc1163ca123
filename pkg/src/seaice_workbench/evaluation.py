"""
Оценка моделей и подготовка отчётов

Предоставляет функциональность для:
- Поиска снимков каталога по точке и интервалу дат
- Отчёта сравнения предсказаний нескольких моделей для одного снимка
- Сравнения карты концентрации с натурными наблюдениями
- Экспорта траекторий метрик и итоговой таблицы запусков
"""

import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from . import pnm, raster_io
from .errors import ConfigError, DataFormatError, ImageReadError, ProjectionError
from .geogrid import ConcentrationChart, GeoPoint, footprint_contains, sample_chart, stereo_forward_arrays
from .losses import METRIC_NAMES, metrics
from .models import Model, predict
from .pipeline import build_sample
from .synth import CatalogEntry, InSituObservation
from .training import MetricsLog, read_metrics, write_metrics_table

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _utc_date(value: Union[date, datetime]) -> date:
    if isinstance(value, datetime):
        if value.tzinfo is not None:
            value = value.astimezone(timezone.utc)
        return value.date()
    return value


# --- Поиск ---------------------------------------------------------------------

@dataclass(frozen=True)
class SearchQuery:
    """Запрос поиска снимков: точка, интервал дат (включительно), лимит"""

    location: GeoPoint
    start: date
    end: date
    max_results: int = 10

    def __post_init__(self):
        object.__setattr__(self, "start", _utc_date(self.start))
        object.__setattr__(self, "end", _utc_date(self.end))
        if self.start > self.end:
            raise ConfigError(f"inverted date range: {self.start} > {self.end}")
        if self.max_results < 1:
            raise ConfigError(f"max_results must be >= 1, got {self.max_results}")


def search_catalog(catalog: Sequence[CatalogEntry], q: SearchQuery) -> List[CatalogEntry]:
    """
    Снимки, контур которых содержит точку запроса и дата которых в интервале

    Returns:
        Не более q.max_results снимков, от новых к старым
    """
    matches = [
        entry for entry in catalog
        if q.start <= _utc_date(entry.timestamp) <= q.end and footprint_contains(entry.footprint, q.location)
    ]
    matches.sort(key=lambda e: e.timestamp, reverse=True)
    return matches[:q.max_results]


# --- Отчёт сравнения моделей -------------------------------------------------------

@dataclass
class ComparisonReport:
    directory: Path
    files: List[Path]
    table: pd.DataFrame


def comparison_report(entry: CatalogEntry, models: Mapping[str, Model], chart: ConcentrationChart,
                      out_dir: PathLike, size: Optional[Tuple[int, int]] = None) -> ComparisonReport:
    """
    Отчёт сравнения моделей для одного снимка

    Записывает в <out_dir>/<entry_id>/ исправленное изображение (оба канала),
    метку с карты (концентрация и неопределённость), предсказание каждой
    модели и таблицу metrics.csv с четырьмя метриками по каждой модели.

    Args:
        entry: Элемент каталога
        models: Модели по именам запусков, в порядке строк таблицы
        chart: Карта концентрации, покрывающая контур снимка
        out_dir: Папка отчётов
        size: Размер образца (H, W); по умолчанию - размер сохранённого изображения

    Returns:
        ComparisonReport
    """
    if size is None:
        try:
            size = raster_io.read_image(entry.image_path).shape[:2]
        except (OSError, DataFormatError) as e:
            raise ImageReadError(entry.id, str(e)) from e
    sample = build_sample(entry, chart, *size)
    directory = Path(out_dir) / entry.id
    directory.mkdir(parents=True, exist_ok=True)

    files = [
        pnm.write_pgm(directory / "image_ch0.pgm", sample.image[..., 0]),
        pnm.write_pgm(directory / "image_ch1.pgm", sample.image[..., 1]),
        pnm.write_pgm(directory / "label_conc.pgm", sample.label.concentration),
        pnm.write_pgm(directory / "label_unc.pgm", sample.label.uncertainty),
    ]
    corners = {}
    for i, corner in enumerate(entry.footprint.corners):
        corners[f"lat{i}"] = corner.lat
        corners[f"lon{i}"] = corner.lon

    rows = []
    for name, model in models.items():
        pred = predict(model, sample.image)
        files.append(pnm.write_pgm(directory / f"pred_{name}.pgm", pred))
        rows.append({"model": name, **metrics(pred, sample.label.data), "entry_id": entry.id, **corners})
    columns = ["model", *METRIC_NAMES, "entry_id", *corners]
    table = pd.DataFrame(rows, columns=columns)
    table_path = directory / "metrics.csv"
    table.to_csv(table_path, index=False, float_format="%.17g", lineterminator="\n")
    files.append(table_path)
    logger.info(f"Отчёт сравнения {entry.id}: {len(models)} моделей, {directory}")
    return ComparisonReport(directory, files, table)


# --- Натурные наблюдения ----------------------------------------------------------

@dataclass(frozen=True)
class BiasRecord:
    location: GeoPoint
    date: date
    observed: float
    chart_estimate: float

    @property
    def error(self) -> float:
        return self.chart_estimate - self.observed


@dataclass
class BiasReport:
    """Сравнение карты с наблюдениями: записи и сводная статистика"""

    records: List[BiasRecord] = field(default_factory=list)
    skipped_outside: int = 0
    skipped_date: int = 0

    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records], dtype=np.float64)

    def summary(self) -> Dict[str, float]:
        """Средняя ошибка (смещение), MAE, стандартное отклонение ошибки, число записей"""
        errors = self.errors()
        if errors.size == 0:
            return {"mean_bias": float("nan"), "mae": float("nan"), "error_sd": float("nan"), "count": 0}
        return {
            "mean_bias": float(np.mean(errors)),
            "mae": float(np.mean(np.abs(errors))),
            "error_sd": float(np.std(errors)),
            "count": int(errors.size),
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"lat": r.location.lat, "lon": r.location.lon, "date": r.date.isoformat(),
                 "observed": r.observed, "chart_estimate": r.chart_estimate, "error": r.error}
                for r in self.records
            ],
            columns=["lat", "lon", "date", "observed", "chart_estimate", "error"],
        )


def _plane_coordinates(observations: Sequence[InSituObservation], chart: ConcentrationChart):
    xs, ys, projectable = [], [], []
    for o in observations:
        try:
            x, y = stereo_forward_arrays(o.location.lat, o.location.lon, chart.hemisphere)
        except ProjectionError:
            x, y = np.nan, np.nan
        xs.append(float(x))
        ys.append(float(y))
        projectable.append(np.isfinite(x))
    return np.array(xs), np.array(ys), np.array(projectable, dtype=bool)


def insitu_compare(observations: Sequence[InSituObservation], chart: ConcentrationChart) -> BiasReport:
    """
    Сравнивает карту концентрации с натурными наблюдениями того же дня

    Оценка карты - билинейная выборка в точке наблюдения. Наблюдения вне
    карты и наблюдения другого дня (по UTC) пропускаются и считаются отдельно.

    Args:
        observations: Наблюдения
        chart: Карта концентрации

    Returns:
        BiasReport
    """
    report = BiasReport()
    if not observations:
        return report
    chart_day = _utc_date(chart.timestamp) if chart.timestamp is not None else None
    xs, ys, projectable = _plane_coordinates(observations, chart)
    inside = projectable.copy()
    inside[projectable] = chart.covers(xs[projectable], ys[projectable])
    estimates = np.full(len(observations), np.nan)
    if inside.any():
        values, _ = sample_chart(chart, xs[inside], ys[inside], strict=False)
        estimates[inside] = values[:, 0]

    for i, o in enumerate(observations):
        day = _utc_date(o.timestamp)
        if not inside[i]:
            report.skipped_outside += 1
        elif chart_day is not None and day != chart_day:
            report.skipped_date += 1
        else:
            report.records.append(BiasRecord(o.location, day, o.observed_concentration, float(estimates[i])))

    if report.skipped_outside or report.skipped_date:
        logger.warning(f"⚠️ Пропущено наблюдений: вне карты {report.skipped_outside}, "
                       f"другой день {report.skipped_date}")
    return report


def write_insitu_report(report: BiasReport, chart: ConcentrationChart, out_dir: PathLike,
                        arm: int = 3) -> List[Path]:
    """
    Записывает записи сравнения в bias.csv, сводку в summary.csv и карту
    концентрации в chart_conc.pgm с перекрестьем в каждой точке наблюдения

    Returns:
        Пути к записанным файлам
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bias_path = out_dir / "bias.csv"
    report.to_frame().to_csv(bias_path, index=False, float_format="%.17g", lineterminator="\n")
    summary = {**report.summary(), "skipped_outside": report.skipped_outside, "skipped_date": report.skipped_date}
    summary_path = out_dir / "summary.csv"
    pd.DataFrame([summary]).to_csv(summary_path, index=False, float_format="%.17g", lineterminator="\n")

    image = chart.concentration.copy()
    n_rows, n_cols = image.shape
    for r in report.records:
        x, y = stereo_forward_arrays(r.location.lat, r.location.lon, chart.hemisphere)
        rows, cols = chart.fractional_index(x, y)
        row, col = int(np.rint(rows)), int(np.rint(cols))
        # Контрастный цвет относительно значения в центре
        ink = 0.0 if image[row, col] >= 0.5 else 1.0
        image[max(0, row - arm):min(n_rows, row + arm + 1), col] = ink
        image[row, max(0, col - arm):min(n_cols, col + arm + 1)] = ink
    chart_path = pnm.write_pgm(out_dir / "chart_conc.pgm", image)
    return [bias_path, summary_path, chart_path]


# --- Траектории метрик ---------------------------------------------------------------

def export_trajectories(logs: Sequence[MetricsLog], out_path: PathLike) -> Path:
    """
    Записывает журналы нескольких запусков в одну таблицу

    Строка на эпоху: запуск, эпоха, этап, датасет, флаг начала этапа,
    все метрики на обучающем и тестовом наборах.
    """
    if not logs:
        raise DataFormatError("no metrics logs to export")
    metric_names = logs[0].metric_names
    for log in logs[1:]:
        if log.metric_names != metric_names:
            raise DataFormatError(f"run {log.run_name} has metrics {log.metric_names}, expected {metric_names}")
    frame = pd.concat([log.to_frame() for log in logs], ignore_index=True)
    return write_metrics_table(frame, out_path)


def read_trajectories(path: PathLike) -> List[MetricsLog]:
    return read_metrics(path)


def final_metrics_table(logs: Sequence[MetricsLog]) -> pd.DataFrame:
    """
    Итоговая таблица запусков: метрики последней эпохи на обучении и тесте

    Returns:
        DataFrame, строка на запуск
    """
    rows = []
    for log in logs:
        if not log.records:
            raise DataFormatError(f"run {log.run_name} has no epochs")
        last = log.records[-1]
        row = {"run": log.run_name, "epochs": last.epoch}
        for name in log.metric_names:
            row[f"train_{name}"] = last.train[name]
            row[f"test_{name}"] = last.test[name]
        rows.append(row)
    return pd.DataFrame(rows)
