"""
Полностью свёрточные архитектуры для оценки концентрации льда

Предоставляет функциональность для:
- Описания архитектуры (ModelConfig) и готовых конфигураций (PRESETS)
- Построения моделей FCNN, U-Net без пулинга и DenseNet без пулинга
- Подсчёта параметров без выделения памяти
- Предсказания карты концентрации по изображению

Все архитектуры сохраняют пространственный размер входа и заканчиваются
свёрткой 1×1 с сигмоидой.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from .errors import InvalidModelConfigError, ShapeMismatchError
from .layers import (
    DTYPE,
    Conv2D,
    Dropout,
    Layer,
    Parameter,
    ReLU,
    Sequential,
    Sigmoid,
    as_tensor4,
    concat_channels,
    iter_layers,
    split_channels,
)
from .seeding import make_rng

logger = logging.getLogger(__name__)


class Family(Enum):
    """Семейство архитектуры"""

    FCNN = "FCNN"
    UNET = "UNET"
    DENSENET = "DENSENET"

    @property
    def display_name(self) -> str:
        """Имя в названиях запусков"""
        return {"FCNN": "CNN", "UNET": "UNet", "DENSENET": "DenseNet"}[self.value]

    @property
    def code(self) -> int:
        return {"FCNN": 1, "UNET": 2, "DENSENET": 3}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "Family":
        for member in cls:
            if member.code == code:
                return member
        raise InvalidModelConfigError(f"unknown family code: {code}")

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        text = str(value).strip().upper()
        if text == "CNN":
            return cls.FCNN
        try:
            return cls(text)
        except ValueError:
            raise InvalidModelConfigError(f"unknown model family: {value!r}") from None


class Mode(Enum):
    TRAIN = "TRAIN"
    EVAL = "EVAL"


@dataclass(frozen=True)
class ModelConfig:
    """
    Конфигурация архитектуры

    layers_or_blocks - число слоёв (FCNN), уровней (UNET) или плотных блоков
    (DENSENET). growth - прибавка фильтров на слой, либо множитель при
    growth_multiplicative; для DenseNet - число каналов, добавляемых каждым слоем блока.
    """

    family: Family
    layers_or_blocks: int
    initial_filters: int
    growth: int
    growth_multiplicative: bool = False
    dense_layers_per_block: int = 0
    dropout_rate: float = 0.0
    input_channels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        minimum_depth = 0 if self.family is Family.FCNN else 1
        if self.layers_or_blocks < minimum_depth:
            raise InvalidModelConfigError(
                f"{self.family.value} needs at least {minimum_depth} layers/blocks, got {self.layers_or_blocks}"
            )
        if self.initial_filters < 1:
            raise InvalidModelConfigError(f"initial filters must be positive, got {self.initial_filters}")
        if self.growth < 0 or (self.growth_multiplicative and self.growth < 1):
            raise InvalidModelConfigError(f"invalid growth: {self.growth}")
        if self.family is Family.DENSENET and (self.dense_layers_per_block < 1 or self.growth < 1):
            raise InvalidModelConfigError("DenseNet needs dense_layers_per_block >= 1 and growth >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidModelConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.input_channels < 1:
            raise InvalidModelConfigError(f"input channels must be positive, got {self.input_channels}")

    def filters_at(self, index: int) -> int:
        """Число фильтров слоя (уровня) с индексом index, считая от 0"""
        if self.growth_multiplicative:
            return self.initial_filters * self.growth ** index
        return self.initial_filters + index * self.growth

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["family"] = self.family.value
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        try:
            return cls(**known)
        except TypeError as e:
            raise InvalidModelConfigError(f"incomplete model config: {e}") from e


# Конфигурации из таблицы архитектур
PRESETS: Dict[str, ModelConfig] = {
    "cnn": ModelConfig(Family.FCNN, layers_or_blocks=10, initial_filters=32, growth=32, dropout_rate=0.2),
    "unet": ModelConfig(Family.UNET, layers_or_blocks=4, initial_filters=128, growth=2,
                        growth_multiplicative=True, dropout_rate=0.5),
    "densenet": ModelConfig(Family.DENSENET, layers_or_blocks=4, initial_filters=16, growth=8,
                            dense_layers_per_block=8, dropout_rate=0.2),
}


def preset(name: str, **overrides) -> ModelConfig:
    """Возвращает готовую конфигурацию с необязательными изменениями"""
    try:
        config = PRESETS[name.lower()]
    except KeyError:
        raise InvalidModelConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
    return replace(config, **overrides) if overrides else config


# --- Блоки архитектур ---------------------------------------------------------

def _hidden_conv(c_in: int, c_out: int, rate: float, name: str) -> Sequential:
    return Sequential([
        Conv2D(c_in, c_out, 3, f"{name}.conv"),
        ReLU(f"{name}.relu"),
        Dropout(rate, f"{name}.dropout"),
    ], name)


def _double_conv(c_in: int, c_out: int, rate: float, name: str) -> Sequential:
    return Sequential([
        Conv2D(c_in, c_out, 3, f"{name}.conv1"),
        ReLU(f"{name}.relu1"),
        Conv2D(c_out, c_out, 3, f"{name}.conv2"),
        ReLU(f"{name}.relu2"),
        Dropout(rate, f"{name}.dropout"),
    ], name)


def _head(c_in: int) -> Sequential:
    return Sequential([Conv2D(c_in, 1, 1, "head.conv", init="glorot"), Sigmoid("head.sigmoid")], "head")


class UNet(Layer):
    """
    U-Net без пулинга: все уровни работают в полном разрешении

    Кодировщик - двойные свёртки с ростом числа фильтров по уровням;
    декодер повторяет кодировщик в обратном порядке: свёртка 3×3 «вверх»,
    склейка с выходом соответствующего уровня кодировщика, двойная свёртка.
    """

    def __init__(self, config: ModelConfig, name: str = "unet"):
        super().__init__(name)
        levels = config.layers_or_blocks
        self.filters = [config.filters_at(i) for i in range(levels)]
        rate = config.dropout_rate

        self.encoders: List[Sequential] = []
        c_in = config.input_channels
        for i, f in enumerate(self.filters):
            self.encoders.append(_double_conv(c_in, f, rate, f"enc{i}"))
            c_in = f
        # Индекс декодера совпадает с уровнем, на который он возвращает
        self.ups: Dict[int, Sequential] = {}
        self.bodies: Dict[int, Sequential] = {}
        for i in reversed(range(levels - 1)):
            self.ups[i] = Sequential([
                Conv2D(self.filters[i + 1], self.filters[i], 3, f"up{i}.conv"),
                ReLU(f"up{i}.relu"),
            ], f"up{i}")
            self.bodies[i] = _double_conv(2 * self.filters[i], self.filters[i], rate, f"dec{i}")
        self.head = _head(self.filters[0])

    def children(self) -> List[Layer]:
        decoder = []
        for i in reversed(range(len(self.filters) - 1)):
            decoder.extend([self.ups[i], self.bodies[i]])
        return self.encoders + decoder + [self.head]

    def param_shapes(self):
        shapes = {}
        for child in self.children():
            shapes.update(child.param_shapes())
        return shapes

    def parameters(self):
        return [p for child in self.children() for p in child.parameters()]

    def initialize(self, rng):
        for child in self.children():
            child.initialize(rng)

    def forward(self, x, training=False):
        h = as_tensor4(x)
        skips = []
        for encoder in self.encoders:
            h = encoder.forward(h, training)
            skips.append(h)
        for i in reversed(range(len(self.filters) - 1)):
            up = self.ups[i].forward(h, training)
            h = self.bodies[i].forward(concat_channels(skips[i], up), training)
        return self.head.forward(h, training)

    def backward(self, grad):
        levels = len(self.filters)
        skip_grads = [None] * levels
        grad = self.head.backward(grad)
        for i in range(levels - 1):
            grad = self.bodies[i].backward(grad)
            skip_grads[i], grad_up = split_channels(grad, self.filters[i])
            grad = self.ups[i].backward(grad_up)
        for i in reversed(range(levels)):
            if skip_grads[i] is not None:
                grad = grad + skip_grads[i]
            grad = self.encoders[i].backward(grad)
        return grad


class DenseBlock(Layer):
    """
    Плотный блок: вход каждого слоя - склейка входа блока и выходов всех
    предыдущих слоёв; выход блока - склейка входа и всех выходов
    """

    def __init__(self, c_in: int, n_layers: int, growth: int, rate: float, name: str):
        super().__init__(name)
        self.c_in = c_in
        self.layers = [
            _hidden_conv(c_in + k * growth, growth, rate, f"{name}.layer{k}") for k in range(n_layers)
        ]
        self.out_channels = c_in + n_layers * growth

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
        features = as_tensor4(x)
        boundaries = []
        for layer in self.layers:
            boundaries.append(features.shape[3])
            features = concat_channels(features, layer.forward(features, training))
        self._cache = boundaries
        return features

    def backward(self, grad):
        boundaries = self._cached()
        for layer, boundary in zip(reversed(self.layers), reversed(boundaries)):
            grad_features, grad_out = split_channels(grad, boundary)
            grad = grad_features + layer.backward(grad_out)
        return grad


def _build_network(config: ModelConfig) -> Layer:
    rate = config.dropout_rate
    if config.family is Family.FCNN:
        layers: List[Layer] = []
        c_in = config.input_channels
        for i in range(config.layers_or_blocks):
            f = config.filters_at(i)
            layers.append(_hidden_conv(c_in, f, rate, f"conv{i + 1}"))
            c_in = f
        layers.append(_head(c_in))
        return Sequential(layers, "fcnn")

    if config.family is Family.UNET:
        return UNet(config)

    layers = [Conv2D(config.input_channels, config.initial_filters, 3, "stem.conv"), ReLU("stem.relu")]
    channels = config.initial_filters
    for b in range(config.layers_or_blocks):
        block = DenseBlock(channels, config.dense_layers_per_block, config.growth, rate, f"block{b}")
        layers.append(block)
        channels = block.out_channels
        if b < config.layers_or_blocks - 1:
            reduced = max(1, channels // 2)
            layers.extend([Conv2D(channels, reduced, 1, f"trans{b}.conv"), ReLU(f"trans{b}.relu")])
            channels = reduced
    layers.append(_head(channels))
    return Sequential(layers, "densenet")


# --- Модель ------------------------------------------------------------------

class Model:
    """Сеть с конфигурацией, упорядоченными параметрами и режимом работы"""

    def __init__(self, config: ModelConfig, network: Layer):
        self.config = config
        self.network = network
        self.mode = Mode.EVAL

    def parameters(self) -> List[Parameter]:
        """Параметры в порядке построения"""
        return self.network.parameters()

    def named_parameters(self) -> "OrderedDict[str, Parameter]":
        return OrderedDict((p.name, p) for p in self.parameters())

    def param_shapes(self) -> Dict:
        return self.network.param_shapes()

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self) -> "Model":
        self.mode = Mode.TRAIN
        return self

    def eval(self) -> "Model":
        self.mode = Mode.EVAL
        return self

    def reseed_dropout(self, seed: int):
        for layer in iter_layers(self.network):
            if isinstance(layer, Dropout):
                layer.reseed(seed)

    def forward(self, x, training: Optional[bool] = None) -> np.ndarray:
        """
        Прямой проход

        Args:
            x: Вход (N, H, W, input_channels)
            training: Режим dropout; по умолчанию определяется self.mode

        Returns:
            Выход (N, H, W, 1)
        """
        x = as_tensor4(x)
        if x.shape[3] != self.config.input_channels:
            raise ShapeMismatchError(
                f"model expects {self.config.input_channels} input channels, got {x.shape[3]}"
            )
        if training is None:
            training = self.mode is Mode.TRAIN
        return self.network.forward(x, training)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.network.backward(grad)

    def zero_grad(self):
        for p in self.parameters():
            p.grad.fill(0.0)

    def state(self) -> "OrderedDict[str, np.ndarray]":
        """Копия значений параметров"""
        return OrderedDict((p.name, p.value.copy()) for p in self.parameters())

    def load_state(self, state: Dict[str, np.ndarray]):
        """Заменяет значения параметров; имена и формы обязаны совпадать"""
        params = self.named_parameters()
        if list(state) != list(params):
            raise ShapeMismatchError("parameter names differ from the model's")
        for name, value in state.items():
            value = np.asarray(value, dtype=DTYPE)
            if value.shape != params[name].value.shape:
                raise ShapeMismatchError(f"{name}: shape {value.shape}, expected {params[name].value.shape}")
            params[name].value[...] = value


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """
    Строит и инициализирует модель

    Скрытые свёртки инициализируются по He (равномерно), выходная -
    по Glorot (равномерно), смещения нулевые.

    Args:
        config: Конфигурация архитектуры
        seed: Seed инициализации весов и масок dropout

    Returns:
        Модель в режиме EVAL
    """
    network = _build_network(config)
    network.initialize(make_rng(seed, "init"))
    model = Model(config, network)
    model.reseed_dropout(seed)
    logger.debug(f"Построена модель {config.family.display_name}: {model.count_parameters()} параметров")
    return model


def count_parameters(config: ModelConfig) -> int:
    """Число весов и смещений архитектуры (без выделения памяти)"""
    return sum(int(np.prod(shape)) for shape in _build_network(config).param_shapes().values())


def predict_batch(model: Model, images: np.ndarray) -> np.ndarray:
    """Предсказание для батча изображений (N, H, W, C) в режиме оценки"""
    out = model.forward(images, training=False)
    # Сигмоида в float64 насыщается до 0 или 1 при |x| > ~37
    return np.clip(out, np.finfo(DTYPE).tiny, np.nextafter(1.0, 0.0))


def predict(model: Model, image: np.ndarray) -> np.ndarray:
    """
    Карта концентрации по одному изображению

    Args:
        model: Модель
        image: Изображение (H, W, C)

    Returns:
        Карта (H, W, 1) со значениями строго в (0, 1)
    """
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim != 3:
        raise ShapeMismatchError(f"image must be (H, W, C), got {image.shape}")
    return predict_batch(model, image[None])[0]
