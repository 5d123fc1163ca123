"""
Формат чекпойнта модели (.sicm)

Структура (little-endian):
    magic "SICM" | версия u16 | семейство u8
    | layers_or_blocks u32 | dense_layers_per_block u32 | initial_filters u32
    | growth u32 | growth_multiplicative u8 | dropout_rate f64 | input_channels u32
    | длина имени u16 + имя (utf-8)
    | число параметров u32
    | для каждого параметра в порядке построения:
        длина имени u16 + имя | ndim u8 | размерности u32 × ndim | данные f64
"""

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointMismatchError,
    DataFormatError,
    InvalidModelConfigError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .models import Family, Model, ModelConfig, build_model

logger = logging.getLogger(__name__)

MAGIC = b"SICM"
VERSION = 1
SUFFIX = ".sicm"

_HEADER = struct.Struct("<4sHB")
_CONFIG = struct.Struct("<IIIIBdI")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U8 = struct.Struct("<B")
_F64 = np.dtype("<f8")


def save_checkpoint(path: Union[str, Path], model: Model, name: str = "") -> Path:
    """
    Сохраняет конфигурацию и параметры модели

    Args:
        path: Путь к файлу
        model: Модель
        name: Имя запуска, записываемое в чекпойнт

    Returns:
        Путь к файлу
    """
    c = model.config
    chunks = [
        _HEADER.pack(MAGIC, VERSION, c.family.code),
        _CONFIG.pack(c.layers_or_blocks, c.dense_layers_per_block, c.initial_filters, c.growth,
                     int(c.growth_multiplicative), c.dropout_rate, c.input_channels),
    ]
    encoded = name.encode("utf-8")
    chunks += [_U16.pack(len(encoded)), encoded]
    params = model.parameters()
    chunks.append(_U32.pack(len(params)))
    for p in params:
        pname = p.name.encode("utf-8")
        chunks += [_U16.pack(len(pname)), pname, _U8.pack(p.value.ndim)]
        chunks += [_U32.pack(d) for d in p.value.shape]
        chunks.append(np.ascontiguousarray(p.value, dtype=_F64).tobytes())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.debug(f"Чекпойнт записан: {path}")
    return path


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedPayloadError(self.path, self.pos + n, len(self.raw))
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def string(self) -> str:
        (length,) = self.unpack(_U16)
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataFormatError(f"{self.path}: invalid name encoding") from e


def read_checkpoint_config(path: Union[str, Path]) -> Tuple[ModelConfig, str]:
    """Читает из чекпойнта только конфигурацию и имя запуска"""
    config, name, _ = _read_header(Path(path))
    return config, name


def _read_header(path: Path) -> Tuple[ModelConfig, str, _Reader]:
    reader = _Reader(path.read_bytes(), path)
    magic, version, family_code = reader.unpack(_HEADER)
    if magic != MAGIC:
        raise BadMagicError(path, magic, MAGIC)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version} in {path}")
    layers, dense, initial, growth, multiplicative, dropout, channels = reader.unpack(_CONFIG)
    try:
        config = ModelConfig(Family.from_code(family_code), layers, initial, growth, bool(multiplicative),
                             dense, dropout, channels)
    except InvalidModelConfigError as e:
        raise DataFormatError(f"{path}: invalid model config: {e}") from e
    return config, reader.string(), reader


def load_checkpoint(path: Union[str, Path], expected: ModelConfig = None) -> Tuple[Model, str]:
    """
    Загружает модель из чекпойнта

    Args:
        path: Путь к файлу
        expected: Если задана, конфигурация чекпойнта обязана с ней совпадать

    Returns:
        Кортеж (модель в режиме EVAL, имя запуска)
    """
    path = Path(path)
    config, name, reader = _read_header(path)
    if expected is not None and expected != config:
        raise CheckpointMismatchError(f"{path}: checkpoint config {config} differs from {expected}")

    model = build_model(config)
    params = model.parameters()
    (count,) = reader.unpack(_U32)
    if count != len(params):
        raise CheckpointMismatchError(f"{path}: {count} parameter arrays, architecture has {len(params)}")
    for p in params:
        pname = reader.string()
        (ndim,) = reader.unpack(_U8)
        shape = tuple(reader.unpack(_U32)[0] for _ in range(ndim))
        if pname != p.name or shape != p.value.shape:
            raise CheckpointMismatchError(
                f"{path}: parameter {pname!r} {shape} does not match {p.name!r} {p.value.shape}"
            )
        data = np.frombuffer(reader.take(int(np.prod(shape)) * _F64.itemsize), dtype=_F64)
        p.value[...] = data.reshape(shape)
    if reader.pos != len(reader.raw):
        raise DataFormatError(f"{path}: {len(reader.raw) - reader.pos} trailing bytes after parameters")
    return model, name
