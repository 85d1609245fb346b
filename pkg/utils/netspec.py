"""Short-notation network grammar and parameter allocation.

    conv=<filters>:<kh>x<kw>   3x3-style convolution, stride 1, zero "same" padding, ReLU
    pool=<ph>x<pw>             max pooling, stride = pool size
    lstm=<units>               bidirectional LSTM
    dropout=<rate>             dropout after every LSTM layer
"""

import logging
import math
import re
from dataclasses import dataclass

import numpy as np

from utils.errors import ShapeError, SpecParseError, UnsupportedProfileError
from utils.model import ModelParams, TrainMeta

logger = logging.getLogger(__name__)

_CONV_RE = re.compile(r"^(\d+):(\d+)x(\d+)$")
_POOL_RE = re.compile(r"^(\d+)x(\d+)$")
_INT_RE = re.compile(r"^\d+$")
_FLOAT_RE = re.compile(r"^(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$")

# constructs of richer network profiles that this grammar deliberately does not model
_OTHER_PROFILE_TOKENS = {"tconv", "concat", "gru", "bgru", "bn", "batchnorm", "dilated_conv", "stride", "act"}


@dataclass(frozen=True)
class Conv:
    filters: int
    kh: int
    kw: int


@dataclass(frozen=True)
class Pool:
    ph: int
    pw: int


@dataclass(frozen=True)
class Lstm:
    units: int
    bidirectional: bool = True


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple

    @property
    def pool_height(self):
        return math.prod(layer.ph for layer in self.layers if isinstance(layer, Pool))

    @property
    def pool_width(self):
        return math.prod(layer.pw for layer in self.layers if isinstance(layer, Pool))

    @property
    def dropout_rate(self):
        rates = [layer.rate for layer in self.layers if isinstance(layer, Dropout)]
        return rates[-1] if rates else 0.0


def _positive(value, what, index):
    number = int(value)
    if number < 1:
        raise SpecParseError(f"{what} must be >= 1, got {number}", index)
    return number


def _parse_token(token, index):
    if "=" not in token:
        raise SpecParseError(f"malformed token '{token}' (expected name=value)", index)
    name, value = (part.strip() for part in token.split("=", 1))
    name = name.lower()

    if name in _OTHER_PROFILE_TOKENS:
        raise UnsupportedProfileError(f"unsupported profile: '{name}' is not part of this grammar", index)

    if name == "conv":
        match = _CONV_RE.match(value)
        if not match:
            if value.count(":") > 1 or re.search(r"[a-z_-]", value.split(":", 1)[-1].replace("x", "")):
                raise UnsupportedProfileError(
                    f"unsupported profile: conv extensions (strides, activations) in '{token}'", index
                )
            raise SpecParseError(f"malformed conv token '{token}'", index)
        return Conv(*(_positive(g, "conv dimension", index) for g in match.groups()))

    if name == "pool":
        match = _POOL_RE.match(value)
        if not match:
            if ":" in value:
                raise UnsupportedProfileError(f"unsupported profile: pool strides in '{token}'", index)
            raise SpecParseError(f"malformed pool token '{token}'", index)
        return Pool(*(_positive(g, "pool dimension", index) for g in match.groups()))

    if name == "lstm":
        if not _INT_RE.match(value):
            raise SpecParseError(f"malformed lstm token '{token}'", index)
        return Lstm(_positive(value, "lstm units", index))

    if name == "dropout":
        if not _FLOAT_RE.match(value):
            raise SpecParseError(f"malformed dropout token '{token}'", index)
        rate = float(value)
        if not 0.0 <= rate < 1.0:
            raise SpecParseError(f"dropout rate must be in [0,1), got {rate}", index)
        return Dropout(rate)

    raise SpecParseError(f"unknown token '{name}'", index)


def parse_spec(text):
    """
    Parse a comma-separated network spec string

    Parameters:
    text: e.g. "conv=40:3x3,pool=2x2,conv=60:3x3,pool=2x2,lstm=200,dropout=0.5"

    Returns:
    NetworkSpec: The ordered layer list
    """
    tokens = [token.strip() for token in (text or "").split(",")]
    if not any(tokens):
        raise SpecParseError("empty network spec", 0)

    layers = []
    seen_lstm = False
    for index, token in enumerate(tokens):
        if not token:
            raise SpecParseError("empty token", index)
        layer = _parse_token(token, index)
        if isinstance(layer, (Conv, Pool)) and seen_lstm:
            raise UnsupportedProfileError("unsupported profile: conv/pool after an lstm layer", index)
        if isinstance(layer, Dropout):
            is_last = index == len(tokens) - 1
            if not is_last and not (layers and isinstance(layers[-1], Lstm)):
                raise SpecParseError("dropout must follow an lstm layer or end the spec", index)
        seen_lstm = seen_lstm or isinstance(layer, Lstm)
        layers.append(layer)
    return NetworkSpec(tuple(layers))


def format_spec(spec):
    """Canonical text of a spec; parse_spec(format_spec(s)) == s"""
    parts = []
    for layer in spec.layers:
        if isinstance(layer, Conv):
            parts.append(f"conv={layer.filters}:{layer.kh}x{layer.kw}")
        elif isinstance(layer, Pool):
            parts.append(f"pool={layer.ph}x{layer.pw}")
        elif isinstance(layer, Lstm):
            parts.append(f"lstm={layer.units}")
        else:
            parts.append(f"dropout={layer.rate!r}")
    return ",".join(parts)


def feature_dims(spec, input_height):
    """
    Shape arithmetic of the convolutional front end

    Returns:
    tuple: (channels, reduced height, per-frame feature size fed to the first LSTM/projection)
    """
    if input_height % spec.pool_height != 0:
        raise ShapeError(
            f"input height {input_height} not divisible by the pool height product {spec.pool_height}"
        )
    channels, height = 1, input_height
    for layer in spec.layers:
        if isinstance(layer, Conv):
            channels = layer.filters
        elif isinstance(layer, Pool):
            height //= layer.ph
    return channels, height, channels * height


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def instantiate(spec, input_height, codec, rng, dtype=np.float32):
    """
    Allocate and Glorot-initialize every tensor of a spec

    Parameters:
    spec: NetworkSpec blueprint
    input_height: Line height the model consumes
    codec: Codec of the output layer (codec.size + 1 classes incl. blank)
    rng: numpy Generator
    dtype: float32 for training, float64 for gradient checks

    Returns:
    ModelParams: Fresh model with EMA shadow equal to the initial tensors
    """
    _, _, features = feature_dims(spec, input_height)
    tensors = {}
    channels = 1
    conv_index = lstm_index = 0
    for layer in spec.layers:
        if isinstance(layer, Conv):
            area = layer.kh * layer.kw
            tensors[f"conv{conv_index}.weight"] = _glorot(
                rng, (layer.filters, channels, layer.kh, layer.kw), channels * area, layer.filters * area, dtype
            )
            tensors[f"conv{conv_index}.bias"] = np.zeros(layer.filters, dtype=dtype)
            channels = layer.filters
            conv_index += 1
        elif isinstance(layer, Lstm):
            units = layer.units
            for direction in ("fw", "bw"):
                prefix = f"lstm{lstm_index}.{direction}"
                tensors[f"{prefix}.W"] = _glorot(rng, (4 * units, features), features, 4 * units, dtype)
                tensors[f"{prefix}.U"] = _glorot(rng, (4 * units, units), units, 4 * units, dtype)
                tensors[f"{prefix}.b"] = np.zeros(4 * units, dtype=dtype)
            features = 2 * units
            lstm_index += 1

    classes = codec.size + 1
    tensors["proj.weight"] = _glorot(rng, (classes, features), features, classes, dtype)
    tensors["proj.bias"] = np.zeros(classes, dtype=dtype)

    logger.debug(f"Instantiated {sum(t.size for t in tensors.values())} parameters for height {input_height}")
    return ModelParams(
        spec=spec,
        codec=codec,
        input_height=input_height,
        tensors=tensors,
        ema_tensors={name: tensor.copy() for name, tensor in tensors.items()},
        train_meta=TrainMeta(),
    )


def glorot_rows(rng, rows, fan_in, fan_out, dtype):
    """Fresh projection rows for codec growth, same initializer as instantiate"""
    return _glorot(rng, (rows, fan_in), fan_in, fan_out, dtype)
