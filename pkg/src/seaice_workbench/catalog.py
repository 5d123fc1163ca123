"""
Чтение и запись табличных файлов каталога

Манифест каталога - текстовая таблица с разделителем табуляции, одна
строка на снимок: id, время ISO-8601, 8 координат углов (lat0 lon0 ... lat3 lon3
в порядке TL, TR, BR, BL), заявленное направление прохода, путь к изображению
(относительно папки манифеста).
"""

import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Union

import pandas as pd

from .errors import DataFormatError, WorkbenchError
from .geogrid import Footprint, GeoPoint, PassDirection
from .synth import CatalogEntry, InSituObservation

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
OBSERVATIONS_NAME = "insitu.tsv"

CORNER_COLUMNS = [f"{axis}{i}" for i in range(4) for axis in ("lat", "lon")]
MANIFEST_COLUMNS = ["id", "timestamp"] + CORNER_COLUMNS + ["pass_direction", "image_path"]
OBSERVATION_COLUMNS = ["timestamp", "lat", "lon", "observed"]

PathLike = Union[str, Path]


def _parse_timestamp(value: str) -> datetime:
    parsed = datetime.fromisoformat(str(value))
    return parsed if parsed.tzinfo else parsed.replace(tzinfo=timezone.utc)


def write_manifest(path: PathLike, entries: List[CatalogEntry]) -> Path:
    """
    Записывает манифест каталога

    Args:
        path: Путь к файлу манифеста
        entries: Элементы каталога

    Returns:
        Путь к записанному файлу
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for entry in entries:
        row = {"id": entry.id, "timestamp": entry.timestamp.isoformat()}
        for i, corner in enumerate(entry.footprint.corners):
            row[f"lat{i}"] = corner.lat
            row[f"lon{i}"] = corner.lon
        row["pass_direction"] = entry.reported_direction.value
        image_path = Path(entry.image_path)
        try:
            row["image_path"] = os.path.relpath(image_path, path.parent)
        except ValueError:
            row["image_path"] = str(image_path)
        rows.append(row)
    df = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    df.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n")
    logger.info(f"Манифест записан: {path} ({len(entries)} снимков)")
    return path


def read_manifest(path: PathLike) -> List[CatalogEntry]:
    """
    Читает манифест каталога

    Пути к изображениям разрешаются относительно папки манифеста.

    Args:
        path: Путь к файлу манифеста

    Returns:
        Список элементов каталога (флаг mislabeled не восстанавливается)
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, sep="\t", dtype={"id": str, "image_path": str, "timestamp": str},
                         float_precision="round_trip", keep_default_na=False)
    except (OSError, pd.errors.ParserError) as e:
        raise DataFormatError(f"cannot read manifest {path}: {e}") from e
    except pd.errors.EmptyDataError:
        return []
    missing = [c for c in MANIFEST_COLUMNS if c not in df.columns]
    if missing:
        raise DataFormatError(f"manifest {path} lacks columns: {missing}")

    entries = []
    for row in df.itertuples(index=False):
        try:
            direction = PassDirection.parse(row.pass_direction)
            corners = tuple(GeoPoint(float(getattr(row, f"lat{i}")), float(getattr(row, f"lon{i}")))
                            for i in range(4))
            image_path = Path(row.image_path)
            if not image_path.is_absolute():
                image_path = path.parent / image_path
            entries.append(CatalogEntry(
                id=row.id,
                timestamp=_parse_timestamp(row.timestamp),
                footprint=Footprint(corners, direction),
                reported_direction=direction,
                image_path=str(image_path),
            ))
        except (WorkbenchError, ValueError) as e:
            raise DataFormatError(f"malformed manifest record {row.id!r} in {path}: {e}") from e
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataFormatError(f"duplicate entry ids in manifest {path}")
    return entries


def write_observations(path: PathLike, observations: List[InSituObservation]) -> Path:
    """Записывает натурные наблюдения в таблицу"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(
        [
            {
                "timestamp": o.timestamp.isoformat(),
                "lat": o.location.lat,
                "lon": o.location.lon,
                "observed": o.observed_concentration,
            }
            for o in observations
        ],
        columns=OBSERVATION_COLUMNS,
    )
    df.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_observations(path: PathLike) -> List[InSituObservation]:
    """Читает таблицу натурных наблюдений"""
    try:
        df = pd.read_csv(path, sep="\t", dtype={"timestamp": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise DataFormatError(f"cannot read observations {path}: {e}") from e
    except pd.errors.EmptyDataError:
        return []
    missing = [c for c in OBSERVATION_COLUMNS if c not in df.columns]
    if missing:
        raise DataFormatError(f"observations file {path} lacks columns: {missing}")
    try:
        return [
            InSituObservation(GeoPoint(row.lat, row.lon), _parse_timestamp(row.timestamp), float(row.observed))
            for row in df.itertuples(index=False)
        ]
    except (WorkbenchError, ValueError) as e:
        raise DataFormatError(f"malformed observation in {path}: {e}") from e
