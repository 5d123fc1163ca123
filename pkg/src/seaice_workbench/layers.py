"""
Минимальный движок слоёв с обратным распространением градиента

Тензоры - массивы numpy формы (N, H, W, C) в float64. Каждый слой хранит
кэш последнего прямого прохода и по нему считает градиенты в backward().
Параметры слоёв выделяются лениво (initialize), поэтому архитектуру можно
построить и посчитать её параметры без выделения памяти.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ModelError, ShapeMismatchError
from .seeding import make_rng

logger = logging.getLogger(__name__)

DTYPE = np.float64


@dataclass(frozen=True)
class Tensor4:
    """Тензор N×H×W×C с явно записанными размерностями"""

    data: np.ndarray
    dims: Tuple[int, int, int, int] = field(init=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=DTYPE)
        if data.ndim != 4 or min(data.shape) < 1:
            raise ShapeMismatchError(f"tensor must be N×H×W×C with positive dims, got {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", tuple(int(d) for d in data.shape))


def as_tensor4(x) -> np.ndarray:
    """Проверяет и приводит вход к массиву (N, H, W, C) float64"""
    if isinstance(x, Tensor4):
        return x.data
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise ShapeMismatchError(f"expected an N×H×W×C tensor, got shape {x.shape}")
    return x


@dataclass
class Parameter:
    """Именованный обучаемый массив и его градиент"""

    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return int(self.value.size)


# --- Функциональные примитивы --------------------------------------------

def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """
    Свёртка "same" с нулевым дополнением (кросс-корреляция)

    Args:
        x: Вход (N, H, W, Cin)
        weights: Ядро (k, k, Cin, Cout), k нечётное
        bias: Смещения (Cout,)

    Returns:
        Кортеж (выход (N, H, W, Cout), кэш для conv2d_backward)
    """
    x = as_tensor4(x)
    k, k2, c_in, c_out = weights.shape
    if k != k2 or k % 2 == 0:
        raise ShapeMismatchError(f"kernel must be square and odd-sized, got {k}x{k2}")
    if x.shape[3] != c_in:
        raise ShapeMismatchError(f"input has {x.shape[3]} channels, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ShapeMismatchError(f"bias shape {bias.shape} does not match {c_out} output channels")
    n, h, w, _ = x.shape
    if k == 1:
        cols = x.reshape(-1, c_in)
    else:
        pad = k // 2
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        # (N, H, W, Cin, k, k) -> (N*H*W, k*k*Cin) в порядке осей ядра
        windows = sliding_window_view(padded, (k, k), axis=(1, 2))
        cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * c_in)
    out = cols @ weights.reshape(k * k * c_in, c_out) + bias
    return out.reshape(n, h, w, c_out), (x.shape, cols, weights)


def conv2d_backward(grad_out: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Градиенты свёртки по входу, ядру и смещениям

    Args:
        grad_out: Градиент по выходу (N, H, W, Cout)
        cache: Кэш conv2d_forward

    Returns:
        Кортеж (grad_x, grad_w, grad_b)
    """
    x_shape, cols, weights = cache
    n, h, w, c_in = x_shape
    k, _, _, c_out = weights.shape
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != (n, h, w, c_out):
        raise ShapeMismatchError(f"upstream gradient shape {grad_out.shape}, expected {(n, h, w, c_out)}")

    g = grad_out.reshape(-1, c_out)
    grad_w = (cols.T @ g).reshape(weights.shape)
    grad_b = g.sum(axis=0)
    grad_cols = g @ weights.reshape(k * k * c_in, c_out).T
    if k == 1:
        return grad_cols.reshape(x_shape), grad_w, grad_b

    pad = k // 2
    grad_cols = grad_cols.reshape(n, h, w, k, k, c_in)
    grad_padded = np.zeros((n, h + 2 * pad, w + 2 * pad, c_in), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            grad_padded[:, i:i + h, j:j + w, :] += grad_cols[:, :, :, i, j, :]
    return grad_padded[:, pad:pad + h, pad:pad + w, :], grad_w, grad_b


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Склеивает тензоры по оси каналов (каналы a идут первыми)"""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 4 or b.ndim != 4 or a.shape[:3] != b.shape[:3]:
        raise ShapeMismatchError(f"cannot concatenate {a.shape} and {b.shape}: N, H, W must match")
    return np.concatenate([a, b], axis=3)


def split_channels(grad: np.ndarray, boundary: int) -> Tuple[np.ndarray, np.ndarray]:
    """Обратная операция к concat_channels: делит градиент на границе каналов"""
    return grad[..., :boundary], grad[..., boundary:]


# --- Слои ------------------------------------------------------------------

class Layer:
    """Базовый слой: прямой проход с кэшем и обратный проход"""

    def __init__(self, name: str):
        self.name = name
        self._cache = None

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    def parameters(self) -> List[Parameter]:
        return []

    def initialize(self, rng: np.random.Generator):
        pass

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise ModelError(f"{self.name}: backward() called before forward()")
        return self._cache


class Conv2D(Layer):
    """
    Свёрточный слой k×k с сохранением размера

    Args:
        in_channels: Число входных каналов
        out_channels: Число фильтров
        kernel_size: Размер ядра (нечётный)
        name: Имя слоя (префикс имён параметров)
        init: Схема инициализации: "he" или "glorot"
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, name: str, init: str = "he"):
        super().__init__(name)
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ShapeMismatchError(f"kernel size must be odd and positive, got {kernel_size}")
        if in_channels < 1 or out_channels < 1:
            raise ShapeMismatchError(f"{name}: channel counts must be positive ({in_channels}, {out_channels})")
        if init not in ("he", "glorot"):
            raise ModelError(f"unknown initialization scheme: {init}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.init = init
        self.weight: Optional[Parameter] = None
        self.bias: Optional[Parameter] = None

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        k = self.kernel_size
        return {
            f"{self.name}.weight": (k, k, self.in_channels, self.out_channels),
            f"{self.name}.bias": (self.out_channels,),
        }

    def parameters(self) -> List[Parameter]:
        if self.weight is None:
            raise ModelError(f"{self.name}: parameters are not initialized")
        return [self.weight, self.bias]

    def initialize(self, rng: np.random.Generator):
        w_shape, b_shape = self.param_shapes().values()
        fan_in = self.kernel_size ** 2 * self.in_channels
        fan_out = self.kernel_size ** 2 * self.out_channels
        if self.init == "he":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = Parameter(f"{self.name}.weight", rng.uniform(-limit, limit, size=w_shape))
        self.bias = Parameter(f"{self.name}.bias", np.zeros(b_shape, dtype=DTYPE))

    def forward(self, x, training=False):
        weight, bias = self.parameters()
        out, self._cache = conv2d_forward(x, weight.value, bias.value)
        return out

    def backward(self, grad):
        grad_x, grad_w, grad_b = conv2d_backward(grad, self._cached())
        self.weight.grad += grad_w
        self.bias.grad += grad_b
        return grad_x


class ReLU(Layer):
    def forward(self, x, training=False):
        x = as_tensor4(x)
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad):
        return np.where(self._cached(), grad, 0.0)


class Sigmoid(Layer):
    def forward(self, x, training=False):
        out = expit(as_tensor4(x))
        self._cache = out
        return out

    def backward(self, grad):
        out = self._cached()
        return grad * out * (1.0 - out)


class Dropout(Layer):
    """
    Инвертированный dropout

    В режиме обучения обнуляет элементы с вероятностью rate и масштабирует
    оставшиеся на 1/(1-rate); в режиме оценки - тождественное отображение.
    """

    def __init__(self, rate: float, name: str, seed: int = 0):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ModelError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.reseed(seed)

    def reseed(self, seed: int):
        self._rng = make_rng(seed, f"dropout-{self.name}")

    def forward(self, x, training=False):
        x = as_tensor4(x)
        if not training or self.rate == 0.0:
            self._cache = None
            return x
        scale = 1.0 / (1.0 - self.rate)
        self._cache = (self._rng.random(x.shape) >= self.rate) * scale
        return x * self._cache

    def backward(self, grad):
        if self._cache is None:
            return grad
        return grad * self._cache


class Sequential(Layer):
    """Цепочка слоёв"""

    def __init__(self, layers: Sequence[Layer], name: str):
        super().__init__(name)
        self.layers = list(layers)

    def children(self) -> List[Layer]:
        return self.layers

    def param_shapes(self):
        shapes = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes())
        return shapes

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def initialize(self, rng):
        for layer in self.layers:
            layer.initialize(rng)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def iter_layers(layer: Layer):
    """Обходит слой и все вложенные слои в порядке построения"""
    yield layer
    children = getattr(layer, "children", None)
    if children is not None:
        for child in children():
            yield from iter_layers(child)
