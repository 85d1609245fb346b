"""Model container file.

Layout (little-endian):
    b"SCRM1"
    uint32 metadata length, UTF-8 JSON metadata
        {"spec": str, "codec": [chars], "input_height": int, "train_meta": {...}, "tensors": [names]}
    per tensor, first the raw set then the "ema/" set, in the metadata's name order:
        uint16 name length, UTF-8 name, uint8 ndim, ndim x uint32 shape, float32 data
"""

import io
import json
import logging
import struct
from pathlib import Path

import numpy as np

from utils.errors import ModelFormatError
from utils.model import Codec, ModelParams, TrainMeta
from utils.netspec import format_spec, parse_spec

logger = logging.getLogger(__name__)

MAGIC = b"SCRM1"
EMA_PREFIX = "ema/"
_FLOAT = np.dtype("<f4")


def _write_tensor(buffer, name, array):
    encoded = name.encode("utf-8")
    buffer.write(struct.pack("<H", len(encoded)))
    buffer.write(encoded)
    buffer.write(struct.pack("<B", array.ndim))
    buffer.write(struct.pack(f"<{array.ndim}I", *array.shape))
    buffer.write(np.ascontiguousarray(array, dtype=_FLOAT).tobytes())


def _read_exact(buffer, size, what):
    data = buffer.read(size)
    if len(data) != size:
        raise ModelFormatError(f"truncated model file while reading {what}")
    return data


def _read_tensor(buffer):
    (name_length,) = struct.unpack("<H", _read_exact(buffer, 2, "tensor name length"))
    name = _read_exact(buffer, name_length, "tensor name").decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(buffer, 1, f"ndim of {name}"))
    shape = struct.unpack(f"<{ndim}I", _read_exact(buffer, 4 * ndim, f"shape of {name}"))
    count = int(np.prod(shape)) if shape else 1
    data = _read_exact(buffer, count * _FLOAT.itemsize, f"data of {name}")
    return name, np.frombuffer(data, dtype=_FLOAT).reshape(shape).astype(np.float32)


def model_to_bytes(params):
    names = list(params.tensors)
    metadata = {
        "spec": format_spec(params.spec),
        "codec": list(params.codec.chars),
        "input_height": params.input_height,
        "train_meta": {"samples_seen": params.train_meta.samples_seen, "epochs": params.train_meta.epochs},
        "tensors": names,
    }
    encoded = json.dumps(metadata, ensure_ascii=False, sort_keys=True).encode("utf-8")
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack("<I", len(encoded)))
    buffer.write(encoded)
    for name in names:
        _write_tensor(buffer, name, params.tensors[name])
    for name in names:
        _write_tensor(buffer, EMA_PREFIX + name, params.ema_tensors[name])
    return buffer.getvalue()


def model_from_bytes(data):
    buffer = io.BytesIO(data)
    if buffer.read(len(MAGIC)) != MAGIC:
        raise ModelFormatError("not a scriptine model file (bad magic)")
    (length,) = struct.unpack("<I", _read_exact(buffer, 4, "metadata length"))
    try:
        metadata = json.loads(_read_exact(buffer, length, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"corrupt model metadata: {e}") from e

    names = metadata.get("tensors", [])
    tensors, ema = {}, {}
    for expected in names + [EMA_PREFIX + n for n in names]:
        name, array = _read_tensor(buffer)
        if name != expected:
            raise ModelFormatError(f"expected tensor '{expected}', found '{name}'")
        if name.startswith(EMA_PREFIX):
            ema[name[len(EMA_PREFIX):]] = array
        else:
            tensors[name] = array
    if buffer.read(1):
        raise ModelFormatError("trailing bytes after the last tensor")

    meta = metadata.get("train_meta", {})
    return ModelParams(
        spec=parse_spec(metadata["spec"]),
        codec=Codec(tuple(metadata["codec"])),
        input_height=int(metadata["input_height"]),
        tensors=tensors,
        ema_tensors=ema,
        train_meta=TrainMeta(int(meta.get("samples_seen", 0)), int(meta.get("epochs", 0))),
    )


def save_model(params, path):
    """Write a model container; tensors are stored as float32"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model_to_bytes(params))
    logger.info(f"Saved model ({params.parameter_count()} parameters) to {path}")
    return path


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"model file not found: {path}")
    return model_from_bytes(path.read_bytes())
