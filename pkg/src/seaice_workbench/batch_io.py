"""
Формат файла батча (.sicb)

Заголовок (little-endian):
    magic "SICB" | версия u16 | размер батча u16 | H u16 | W u16
    | каналов изображения u8 (=2) | каналов метки u8 (=2)
Далее batch_size записей: изображение, затем метка, построчно, float32.
Размер данных обязан точно совпадать с размером, следующим из заголовка.
"""

import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import (
    BadMagicError,
    BatchWriteError,
    DimensionMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC = b"SICB"
VERSION = 1
IMAGE_CHANNELS = 2
LABEL_CHANNELS = 2
HEADER = struct.Struct("<4sHHHHBB")
_STORAGE = np.dtype("<f4")
_MAX_U16 = 0xFFFF


def payload_size(batch_size: int, h: int, w: int, image_channels: int = IMAGE_CHANNELS,
                 label_channels: int = LABEL_CHANNELS) -> int:
    """Размер данных в байтах, следующий из заголовка"""
    return batch_size * h * w * (image_channels + label_channels) * _STORAGE.itemsize


def write_batch(path: Union[str, Path], images: np.ndarray, labels: np.ndarray) -> Path:
    """
    Записывает батч в один файл

    Args:
        path: Путь к файлу
        images: Изображения (B, H, W, 2)
        labels: Метки (B, H, W, 2)

    Returns:
        Путь к записанному файлу
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 4 or images.shape[3] != IMAGE_CHANNELS:
        raise DimensionMismatchError(f"images must be (B, H, W, {IMAGE_CHANNELS}), got {images.shape}")
    if labels.shape != images.shape[:3] + (LABEL_CHANNELS,):
        raise DimensionMismatchError(f"labels shape {labels.shape} does not match images {images.shape}")
    b, h, w, _ = images.shape
    if max(b, h, w) > _MAX_U16:
        raise DimensionMismatchError(f"batch dimensions exceed u16 range: {images.shape}")

    header = HEADER.pack(MAGIC, VERSION, b, h, w, IMAGE_CHANNELS, LABEL_CHANNELS)
    records = np.concatenate(
        [images.reshape(b, -1).astype(_STORAGE), labels.reshape(b, -1).astype(_STORAGE)], axis=1
    )
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.ascontiguousarray(records).tobytes())
    except OSError as e:
        raise BatchWriteError(f"cannot write batch file {path}: {e}") from e
    return path


def read_batch(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Читает батч из файла

    Args:
        path: Путь к файлу

    Returns:
        Кортеж (изображения, метки) float64 формы (B, H, W, 2)
    """
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise TruncatedPayloadError(path, HEADER.size, len(raw))
    magic, version, b, h, w, img_c, lab_c = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(path, magic, MAGIC)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported batch version {version} in {path}")
    if img_c != IMAGE_CHANNELS or lab_c != LABEL_CHANNELS:
        raise DimensionMismatchError(f"{path}: channel counts {img_c}/{lab_c}, expected 2/2")
    if min(b, h, w) == 0:
        raise DimensionMismatchError(f"{path}: zero dimension in header ({b}, {h}, {w})")

    expected = payload_size(b, h, w, img_c, lab_c)
    payload = memoryview(raw)[HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(path, expected, len(payload))
    if len(payload) > expected:
        raise DimensionMismatchError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")

    records = np.frombuffer(payload, dtype=_STORAGE).reshape(b, -1)
    split = h * w * img_c
    images = records[:, :split].reshape(b, h, w, img_c).astype(np.float64)
    labels = records[:, split:].reshape(b, h, w, lab_c).astype(np.float64)
    return images, labels
