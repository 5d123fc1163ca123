"""
Запись и чтение 16-битных изображений PGM (P5)

Уровень серого = round(значение * 65535), значения за пределами [0, 1]
прижимаются к границам.
"""

from pathlib import Path
from typing import Union

import numpy as np

from .errors import BadMagicError, DataFormatError, TruncatedPayloadError

MAXVAL = 65535


def to_gray16(values: np.ndarray) -> np.ndarray:
    """Переводит значения [0, 1] в уровни серого uint16"""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.rint(values * MAXVAL).astype(np.uint16)


def encode_pgm(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim == 3 and values.shape[2] == 1:
        values = values[..., 0]
    if values.ndim != 2:
        raise DataFormatError(f"graymap needs a 2-D array, got {values.shape}")
    h, w = values.shape
    header = f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii")
    return header + to_gray16(values).astype(">u2").tobytes()


def write_pgm(path: Union[str, Path], values: np.ndarray) -> Path:
    """
    Записывает двумерный массив как 16-битный PGM

    Args:
        path: Путь к файлу
        values: Массив (H, W) или (H, W, 1) со значениями в [0, 1]

    Returns:
        Путь к файлу
    """
    path = Path(path)
    path.write_bytes(encode_pgm(values))
    return path


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Читает 16-битный PGM, записанный write_pgm, и возвращает уровни серого (H, W)"""
    raw = Path(path).read_bytes()
    fields = raw.split(maxsplit=4)
    if len(fields) < 4 or fields[0] != b"P5":
        raise BadMagicError(path, raw[:2], b"P5")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as e:
        raise DataFormatError(f"malformed graymap header in {path}") from e
    if maxval != MAXVAL:
        raise DataFormatError(f"{path}: expected maxval {MAXVAL}, got {maxval}")
    header_len = len(f"P5\n{w} {h}\n{maxval}\n")
    payload = raw[header_len:]
    if len(payload) < 2 * w * h:
        raise TruncatedPayloadError(path, 2 * w * h, len(payload))
    return np.frombuffer(payload[:2 * w * h], dtype=">u2").reshape(h, w).astype(np.uint16)
