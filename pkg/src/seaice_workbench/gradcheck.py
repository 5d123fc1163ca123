"""
Проверка градиентов центральными конечными разностями
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .layers import Layer
from .losses import LossFunction
from .models import Model

logger = logging.getLogger(__name__)

# Нижняя граница знаменателя относительной ошибки
_REL_FLOOR = 1e-6

Checkable = Union[Model, Layer]


@dataclass
class GradCheckResult:
    max_relative_error: float
    worst: str
    checked: int


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _REL_FLOOR)


def _loss_and_backward(target: Checkable, loss: LossFunction, x: np.ndarray, label: np.ndarray):
    for p in target.parameters():
        p.grad.fill(0.0)
    pred = target.forward(x, training=False)
    grad_x = target.backward(loss.gradient(pred, label))
    return loss.value(pred, label), grad_x


def _loss(target: Checkable, loss: LossFunction, x: np.ndarray, label: np.ndarray) -> float:
    return loss.value(target.forward(x, training=False), label)


def finite_difference_check(target: Checkable, loss: LossFunction, x: np.ndarray, label: np.ndarray,
                            eps: float = 1e-5, max_per_parameter: Optional[int] = None,
                            seed: int = 0) -> GradCheckResult:
    """
    Сравнивает градиенты обратного прохода с центральными разностями

    Прямые проходы выполняются в режиме оценки (dropout отключён).

    Args:
        target: Модель или слой
        loss: Функция потерь
        x: Вход (N, H, W, C)
        label: Метка (N, H, W, 2)
        eps: Шаг разностей
        max_per_parameter: Проверять не больше стольких элементов каждого массива
        seed: Seed выбора проверяемых элементов

    Returns:
        GradCheckResult с максимальной относительной ошибкой
    """
    x = np.asarray(x, dtype=np.float64)
    _loss_and_backward(target, loss, x, label)
    rng = np.random.default_rng(seed)
    worst, worst_name, checked = 0.0, "", 0

    for p in target.parameters():
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        indices = np.arange(flat.size)
        if max_per_parameter is not None and flat.size > max_per_parameter:
            indices = rng.choice(flat.size, size=max_per_parameter, replace=False)
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + eps
            plus = _loss(target, loss, x, label)
            flat[idx] = original - eps
            minus = _loss(target, loss, x, label)
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            err = relative_error(float(analytic.reshape(-1)[idx]), numeric)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{p.name}[{int(idx)}]"

    logger.debug(f"Проверка градиентов: {checked} элементов, макс. относительная ошибка {worst:.3e}")
    return GradCheckResult(worst, worst_name, checked)


def input_gradient_check(target: Checkable, loss: LossFunction, x: np.ndarray, label: np.ndarray,
                         eps: float = 1e-5) -> GradCheckResult:
    """Та же проверка для градиента по входу"""
    x = np.array(x, dtype=np.float64)
    _, grad_x = _loss_and_backward(target, loss, x, label)
    flat = x.reshape(-1)
    worst, worst_name = 0.0, ""
    for idx in range(flat.size):
        original = flat[idx]
        flat[idx] = original + eps
        plus = _loss(target, loss, x, label)
        flat[idx] = original - eps
        minus = _loss(target, loss, x, label)
        flat[idx] = original
        err = relative_error(float(grad_x.reshape(-1)[idx]), (plus - minus) / (2.0 * eps))
        if err > worst:
            worst, worst_name = err, f"input[{idx}]"
    return GradCheckResult(worst, worst_name, flat.size)
