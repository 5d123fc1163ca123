"""
Функции потерь и метрики с учётом неопределённости метки

Метка имеет два канала: концентрация и неопределённость u. Ошибка каждого
пикселя умножается на «уверенность» (1 - u), так что пиксели с u = 1
не влияют на потерю.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from .errors import ShapeMismatchError

METRIC_NAMES = ("weighted_mae", "mae", "weighted_mse", "mse")


def _split(pred, label) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.ndim < 3 or pred.shape[-1] != 1:
        raise ShapeMismatchError(f"prediction must be (..., H, W, 1), got {pred.shape}")
    if label.shape[-1] != 2 or label.shape[:-1] != pred.shape[:-1]:
        raise ShapeMismatchError(f"label {label.shape} does not match prediction {pred.shape}")
    return pred[..., 0], label[..., 0], label[..., 1]


def uncertainty_weighted_mae(pred, label) -> float:
    """
    Средняя абсолютная ошибка, взвешенная уверенностью метки

    Args:
        pred: Предсказание (H, W, 1) или батч (N, H, W, 1)
        label: Метка (H, W, 2) или батч (N, H, W, 2)

    Returns:
        mean(|pred - conc| * (1 - unc)); для батча - среднее по образцам
    """
    p, conc, unc = _split(pred, label)
    return float(np.mean(np.abs(p - conc) * (1.0 - unc)))


def uw_mae_gradient(pred, label) -> np.ndarray:
    """
    Градиент uncertainty_weighted_mae по предсказанию

    В точке излома (pred == conc) берётся субградиент 0.

    Returns:
        Массив формы pred
    """
    p, conc, unc = _split(pred, label)
    grad = np.sign(p - conc) * (1.0 - unc) / p.size
    return grad[..., None]


def mse(pred, label) -> float:
    p, conc, _ = _split(pred, label)
    return float(np.mean((p - conc) ** 2))


def mse_gradient(pred, label) -> np.ndarray:
    p, conc, _ = _split(pred, label)
    return (2.0 * (p - conc) / p.size)[..., None]


def metrics(pred, label) -> Dict[str, float]:
    """
    Четыре метрики качества: взвешенные и обычные MAE и MSE

    Returns:
        Словарь с ключами weighted_mae, mae, weighted_mse, mse
    """
    p, conc, unc = _split(pred, label)
    err = p - conc
    certainty = 1.0 - unc
    return {
        "weighted_mae": float(np.mean(np.abs(err) * certainty)),
        "mae": float(np.mean(np.abs(err))),
        "weighted_mse": float(np.mean(err ** 2 * certainty)),
        "mse": float(np.mean(err ** 2)),
    }


@dataclass(frozen=True)
class LossFunction:
    """Функция потерь вместе с её градиентом по предсказанию"""

    name: str
    value: Callable[[np.ndarray, np.ndarray], float]
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray]


UW_MAE = LossFunction("uw_mae", uncertainty_weighted_mae, uw_mae_gradient)
MSE = LossFunction("mse", mse, mse_gradient)

LOSSES: Dict[str, LossFunction] = {loss.name: loss for loss in (UW_MAE, MSE)}
