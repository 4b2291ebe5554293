"""
Model checkpoints.

Binary layout (all integers little-endian):

    b"TNET"                          magic
    u32 version
    u32 n_layers
    n_layers x (u32 in, u32 out, u32 k, u8 pool_after, u8 relu, u8 padding)
    u32 n_heads, u32 num_classes, u32 feature_dim
    n_heads x (u8 name_length, utf-8 transform name)
    float64 payload, arrays in ModelParams.arrays() order

The JSON export carries the same descriptor with base64 payloads per array.
"""

import base64
import json
import logging
import os
import struct
from typing import Union

import numpy as np

from transnet.dihedral.group import TransformationSet
from transnet.models import MODEL_CONF
from transnet.models.params import ConvLayer, Head, ModelParams
from transnet.models.transnet import TransNetModel
from transnet.util.exception_handler import FormatError
from transnet.util.types import Padding

logger = logging.getLogger(__name__)

_PADDING_CODES = {Padding.same: 0, Padding.valid: 1}
_PADDING_FROM_CODE = {v: k for k, v in _PADDING_CODES.items()}

PathLike = Union[str, os.PathLike]


def checkpoint_bytes(model: TransNetModel) -> bytes:
    params = model.params
    parts = [MODEL_CONF.CHECKPOINT_MAGIC, struct.pack("<II", MODEL_CONF.CHECKPOINT_VERSION, len(params.conv_layers))]
    for spec in params.architecture:
        parts.append(
            struct.pack(
                "<IIIBBB",
                spec.in_channels,
                spec.out_channels,
                spec.kernel_size,
                int(spec.pool_after),
                int(spec.relu),
                _PADDING_CODES[spec.padding],
            )
        )
    parts.append(struct.pack("<III", params.num_heads, params.num_classes, params.feature_dim))
    for name in model.transforms.names:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<B", len(encoded)) + encoded)
    for array in params.arrays():
        parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: TransNetModel, path: PathLike) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))
    logger.debug(f"wrote checkpoint {path} ({model.params.count_parameters()} parameters)")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(data: bytes) -> TransNetModel:
    reader = _Reader(data)
    if reader.take(4) != MODEL_CONF.CHECKPOINT_MAGIC:
        raise FormatError("not a TNET checkpoint (bad magic)")
    version, n_layers = reader.unpack("<II")
    if version != MODEL_CONF.CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if n_layers < 1:
        raise FormatError("checkpoint declares no convolutional layers")

    layer_meta = []
    for _ in range(n_layers):
        in_c, out_c, k, pool, relu, padding = reader.unpack("<IIIBBB")
        if padding not in _PADDING_FROM_CODE:
            raise FormatError(f"unknown padding code {padding}")
        layer_meta.append((in_c, out_c, k, bool(pool), bool(relu), _PADDING_FROM_CODE[padding]))
    n_heads, num_classes, feature_dim = reader.unpack("<III")
    names = []
    for _ in range(n_heads):
        (length,) = reader.unpack("<B")
        try:
            names.append(reader.take(length).decode("utf-8"))
        except UnicodeDecodeError as e:
            raise FormatError(f"transform name is not valid utf-8: {e}") from e

    def read_array(shape):
        count = int(np.prod(shape))
        return np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)

    try:
        layers = []
        for in_c, out_c, k, pool, relu, padding in layer_meta:
            kernels = read_array((out_c, in_c, k, k))
            bias = read_array((out_c,))
            layers.append(ConvLayer(kernels, bias, pool, relu, padding))
        heads = [Head(read_array((num_classes, feature_dim)), read_array((num_classes,))) for _ in range(n_heads)]
        if reader.pos != len(data):
            raise FormatError(f"{len(data) - reader.pos} trailing bytes after the parameter payload")
        return TransNetModel(ModelParams(layers, heads), TransformationSet(names))
    except FormatError:
        raise
    except ValueError as e:
        raise FormatError(f"inconsistent checkpoint: {e}") from e


def load_checkpoint(path: PathLike) -> TransNetModel:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


def _encode(array: np.ndarray) -> dict:
    return {"shape": list(array.shape), "data": base64.b64encode(np.ascontiguousarray(array, dtype="<f8").tobytes()).decode("ascii")}


def _decode(entry: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(entry["data"], validate=True)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad array entry in JSON checkpoint: {e}") from e


def export_json(model: TransNetModel) -> str:
    params = model.params
    doc = {
        "format": MODEL_CONF.CHECKPOINT_MAGIC.decode("ascii"),
        "version": MODEL_CONF.CHECKPOINT_VERSION,
        "transforms": model.transforms.names,
        "conv_layers": [
            {
                "pool_after": layer.pool_after,
                "relu": layer.relu,
                "padding": layer.padding.value,
                "kernels": _encode(layer.kernels),
                "bias": _encode(layer.bias),
            }
            for layer in params.conv_layers
        ],
        "heads": [{"weight": _encode(h.weight), "bias": _encode(h.bias)} for h in params.heads],
    }
    return json.dumps(doc, indent=1)


def import_json(text: str) -> TransNetModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"checkpoint is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != MODEL_CONF.CHECKPOINT_MAGIC.decode("ascii"):
        raise FormatError("JSON document is not a TNET checkpoint")
    try:
        layers = [
            ConvLayer(_decode(entry["kernels"]), _decode(entry["bias"]), entry["pool_after"], entry["relu"], entry["padding"])
            for entry in doc["conv_layers"]
        ]
        heads = [Head(_decode(entry["weight"]), _decode(entry["bias"])) for entry in doc["heads"]]
        return TransNetModel(ModelParams(layers, heads), TransformationSet(doc["transforms"]))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"inconsistent JSON checkpoint: {e}") from e


def load_any(path: PathLike) -> TransNetModel:
    """Binary or JSON checkpoint, chosen by content."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] == MODEL_CONF.CHECKPOINT_MAGIC:
        return checkpoint_from_bytes(data)
    try:
        return import_json(data.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise FormatError(f"{path} is neither a binary nor a JSON checkpoint") from e
