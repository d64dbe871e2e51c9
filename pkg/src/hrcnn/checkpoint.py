"""Binary checkpoint (HRC1) and activation-tap (TAP1) files.

All integers are unsigned 32-bit little-endian and all payloads are float64
little-endian, row-major.

HRC1: magic | version | quality | layer count | per layer: index, kind,
4 weight dims, weight payload, bias payload (length = layer out channels).

TAP1: magic | width | height | quality | channels | payload (channels, height, width).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .kspace import FormatError
from .model import LAYERS, TRAINABLE, ModelParams

CKPT_MAGIC = b"HRC1"
CKPT_VERSION = 1
KIND_CODES = {"coded_mask": 0, "conv_transpose": 1, "conv": 2}
_U32 = struct.Struct("<I")
_HEAD = struct.Struct("<4sIII")
_LAYER_HEAD = struct.Struct("<IIIIII")

TAP_MAGIC = b"TAP1"
_TAP_HEAD = struct.Struct("<4sIIII")


def checkpoint_to_bytes(params: ModelParams) -> bytes:
    params.validate()
    parts = [_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, params.quality, len(TRAINABLE))]
    for index in TRAINABLE:
        w = params.weights[index]
        parts.append(_LAYER_HEAD.pack(index, KIND_CODES[LAYERS[index].kind], *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(params.biases[index], dtype="<f8").tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> ModelParams:
    if len(data) < _HEAD.size:
        raise FormatError("checkpoint truncated in header")
    magic, version, quality, count = _HEAD.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {CKPT_VERSION}")
    if count != len(TRAINABLE):
        raise FormatError(f"checkpoint holds {count} layers, architecture has {len(TRAINABLE)}")
    pos = _HEAD.size
    params = ModelParams(quality=quality)
    for expected in TRAINABLE:
        if len(data) < pos + _LAYER_HEAD.size:
            raise FormatError(f"layer {expected}: checkpoint truncated in layer header")
        index, kind, *dims = _LAYER_HEAD.unpack_from(data, pos)
        pos += _LAYER_HEAD.size
        spec = LAYERS.get(index)
        if index != expected or spec is None:
            raise FormatError(f"layer {expected}: found layer index {index} in its place")
        if kind != KIND_CODES[spec.kind]:
            raise FormatError(f"layer {index}: kind code {kind}, expected {KIND_CODES[spec.kind]} ({spec.kind})")
        if tuple(dims) != spec.weight_shape:
            raise FormatError(f"layer {index}: weight shape {tuple(dims)} does not match architecture {spec.weight_shape}")
        nw = int(np.prod(dims))
        nb = spec.out_channels
        end = pos + 8 * (nw + nb)
        if len(data) < end:
            raise FormatError(f"layer {index}: checkpoint truncated in payload")
        params.weights[index] = np.frombuffer(data, "<f8", nw, pos).reshape(dims).astype(np.float64)
        params.biases[index] = np.frombuffer(data, "<f8", nb, pos + 8 * nw).astype(np.float64)
        pos = end
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last layer")
    return params


def save_checkpoint(params: ModelParams, path):
    Path(path).write_bytes(checkpoint_to_bytes(params))


def load_checkpoint(path) -> ModelParams:
    return checkpoint_from_bytes(Path(path).read_bytes())


def tap_to_bytes(tap, quality) -> bytes:
    tap = np.asarray(tap, dtype=np.float64)
    if tap.ndim != 3:
        raise ValueError(f"tap must be (channels, height, width), got {tap.shape}")
    c, h, w = tap.shape
    return _TAP_HEAD.pack(TAP_MAGIC, w, h, quality, c) + np.ascontiguousarray(tap, dtype="<f8").tobytes()


def tap_from_bytes(data: bytes):
    """Return ``(array, quality)``."""
    if len(data) < _TAP_HEAD.size:
        raise FormatError("tap file truncated in header")
    magic, w, h, quality, c = _TAP_HEAD.unpack_from(data)
    if magic != TAP_MAGIC:
        raise FormatError(f"bad tap magic {magic!r}")
    if len(data) != _TAP_HEAD.size + 8 * c * h * w:
        raise FormatError("tap payload size does not match its header")
    return np.frombuffer(data, "<f8", offset=_TAP_HEAD.size).reshape(c, h, w).astype(np.float64), quality


def write_tap(tap, quality, path):
    Path(path).write_bytes(tap_to_bytes(tap, quality))


def read_tap(path):
    return tap_from_bytes(Path(path).read_bytes())
