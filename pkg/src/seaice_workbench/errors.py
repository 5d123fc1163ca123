"""
Иерархия исключений seaice_workbench

Каждое семейство исключений соответствует отдельному коду выхода CLI
(см. EXIT_CODES).
"""

from typing import Any, Dict, Optional


class WorkbenchError(Exception):
    """Базовое исключение проекта"""

    exit_code = 1


# --- Конфигурация ---------------------------------------------------------

class ConfigError(WorkbenchError, ValueError):
    """Некорректная конфигурация или значение вне допустимого диапазона"""

    exit_code = 3


# --- Форматы данных -------------------------------------------------------

class DataFormatError(WorkbenchError):
    """Ошибка чтения или записи файлов данных"""

    exit_code = 4


class BadMagicError(DataFormatError):
    """Неверная сигнатура файла"""

    def __init__(self, path: Any, found: bytes, expected: bytes):
        super().__init__(f"bad magic in {path}: {found!r} (expected {expected!r})")
        self.path = path
        self.found = found


class TruncatedPayloadError(DataFormatError):
    """Файл короче, чем требует заголовок"""

    def __init__(self, path: Any, expected: int, actual: int):
        super().__init__(f"truncated payload in {path}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class DimensionMismatchError(DataFormatError):
    """Размерности в заголовке не согласуются с данными"""


class UnsupportedVersionError(DataFormatError):
    """Неизвестная версия формата"""


class CheckpointMismatchError(DataFormatError):
    """Параметры чекпойнта не совпадают с архитектурой модели"""


class ImageReadError(DataFormatError):
    """Не удалось прочитать изображение элемента каталога"""

    def __init__(self, entry_id: str, reason: str):
        super().__init__(f"cannot read image for entry {entry_id}: {reason}")
        self.entry_id = entry_id


class BatchWriteError(DataFormatError):
    """Не удалось записать файл батча"""


# --- Геометрия ------------------------------------------------------------

class GeometryError(WorkbenchError, ValueError):
    """Ошибки геометрии и проекций"""

    exit_code = 5


class ProjectionError(GeometryError):
    """Точка не может быть спроецирована"""


class DegenerateFootprintError(GeometryError):
    """Вырожденный контур снимка"""


class ChartCoverageError(GeometryError):
    """Контур снимка выходит за пределы карты концентрации"""


# --- Модели ---------------------------------------------------------------

class ModelError(WorkbenchError, ValueError):
    """Ошибки построения и применения моделей"""

    exit_code = 6


class ShapeMismatchError(ModelError):
    """Несовместимые размерности тензоров"""


class InvalidModelConfigError(ModelError):
    """Некорректная конфигурация архитектуры"""


# --- Обучение -------------------------------------------------------------

class TrainingError(WorkbenchError):
    """Ошибки процесса обучения"""

    exit_code = 7


class MissingDatasetError(TrainingError):
    """Датасет, указанный в стратегии, не найден"""


class TrainingDivergedError(TrainingError):
    """Значение функции потерь стало NaN или бесконечным"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


EXIT_CODES = {
    "ok": 0,
    "unexpected": 1,
    "usage": 2,
    "config": ConfigError.exit_code,
    "data": DataFormatError.exit_code,
    "geometry": GeometryError.exit_code,
    "model": ModelError.exit_code,
    "training": TrainingError.exit_code,
}
