"""
Контейнер растровых данных (.sicr)

Формат (little-endian):
    magic "SICR" | версия u16 | длина метаданных u32 | метаданные JSON (UTF-8)
    | данные массива построчно

Метаданные всегда содержат "tag" ("image", "chart", "truth"), "dtype" и "shape";
остальные поля зависят от тега.
"""

import json
import struct
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .errors import (
    BadMagicError,
    DataFormatError,
    DimensionMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .geogrid import ConcentrationChart, Hemisphere, PlanePoint

MAGIC = b"SICR"
VERSION = 1
_HEADER = struct.Struct("<4sHI")
_DTYPES = {"<f4": np.float32, "<f8": np.float64}

PathLike = Union[str, Path]


def write_raster(path: PathLike, array: np.ndarray, tag: str, dtype: str = "<f8",
                 metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Записывает массив в контейнер

    Args:
        path: Путь к файлу
        array: Массив данных
        tag: Тег содержимого
        dtype: Тип хранения ("<f4" или "<f8")
        metadata: Дополнительные поля метаданных

    Returns:
        Путь к записанному файлу
    """
    if dtype not in _DTYPES:
        raise DataFormatError(f"unsupported dtype: {dtype}")
    data = np.ascontiguousarray(array, dtype=np.dtype(dtype))
    meta = dict(metadata or {})
    meta.update({"tag": tag, "dtype": dtype, "shape": list(data.shape)})
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(data.tobytes(order="C"))
    return path


def read_raster(path: PathLike, expected_tag: Optional[str] = None) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Читает массив из контейнера

    Args:
        path: Путь к файлу
        expected_tag: Ожидаемый тег (проверяется, если указан)

    Returns:
        Кортеж (массив float64, метаданные)
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(path, _HEADER.size, len(raw))
    magic, version, meta_len = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(path, magic, MAGIC)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported raster version {version} in {path}")
    meta_end = _HEADER.size + meta_len
    if len(raw) < meta_end:
        raise TruncatedPayloadError(path, meta_end, len(raw))
    try:
        meta = json.loads(raw[_HEADER.size:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"corrupted metadata in {path}: {e}") from e

    if expected_tag is not None and meta.get("tag") != expected_tag:
        raise DataFormatError(f"{path}: expected tag {expected_tag!r}, found {meta.get('tag')!r}")
    dtype = meta.get("dtype")
    if dtype not in _DTYPES:
        raise DataFormatError(f"{path}: unsupported dtype {dtype!r}")
    shape = tuple(int(n) for n in meta.get("shape", ()))
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    payload = raw[meta_end:]
    if len(payload) < expected:
        raise TruncatedPayloadError(path, expected, len(payload))
    if len(payload) > expected:
        raise DimensionMismatchError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    array = np.frombuffer(payload, dtype=np.dtype(dtype)).reshape(shape).astype(np.float64)
    return array, meta


def write_image(path: PathLike, image: np.ndarray, **metadata) -> Path:
    """Записывает изображение H×W×2 (хранение в 32-битном формате)"""
    return write_raster(path, image, tag="image", dtype="<f4", metadata=metadata)


def read_image(path: PathLike) -> np.ndarray:
    """Читает изображение H×W×2"""
    image, _ = read_raster(path, expected_tag="image")
    if image.ndim != 3:
        raise DimensionMismatchError(f"{path}: image must be 3-dimensional, got shape {image.shape}")
    return image


def write_chart(path: PathLike, chart: ConcentrationChart) -> Path:
    """Записывает карту концентрации вместе с геопривязкой"""
    metadata = {
        "origin_x": chart.origin.x,
        "origin_y": chart.origin.y,
        "spacing": chart.spacing,
        "hemisphere": chart.hemisphere.value,
        "timestamp": chart.timestamp.isoformat() if chart.timestamp else None,
    }
    return write_raster(path, chart.grid, tag="chart", dtype="<f8", metadata=metadata)


def read_chart(path: PathLike) -> ConcentrationChart:
    """Читает карту концентрации"""
    grid, meta = read_raster(path, expected_tag="chart")
    try:
        timestamp = datetime.fromisoformat(meta["timestamp"]) if meta.get("timestamp") else None
        return ConcentrationChart(
            grid=grid,
            origin=PlanePoint(meta["origin_x"], meta["origin_y"]),
            spacing=meta["spacing"],
            hemisphere=Hemisphere.parse(meta["hemisphere"]),
            timestamp=timestamp,
        )
    except KeyError as e:
        raise DataFormatError(f"{path}: missing chart metadata field {e}") from e
