"""Versioned binary model checkpoints.

Layout (all integers little-endian):

    magic   4B   b"FSRL"
    version u16  (currently 1)
    owner   u16 length + utf-8 bytes
    count   u16  number of layers
    per layer:
        layer_id   u16 length + utf-8 bytes
        scope      u8   (0=local, 1=global)
        activation u8   (0=none, 1=relu, 2=sigmoid)
        in_dim     u32
        out_dim    u32
        weights    in_dim*out_dim float64, row-major
        bias       out_dim float64
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import Activation, DenseLayer, Scope, SplitModel

MAGIC = b"FSRL"
VERSION = 1

_SCOPE_CODE = {Scope.LOCAL: 0, Scope.GLOBAL: 1}
_SCOPE_FROM = {v: k for k, v in _SCOPE_CODE.items()}
_ACT_CODE = {Activation.NONE: 0, Activation.RELU: 1, Activation.SIGMOID: 2}
_ACT_FROM = {v: k for k, v in _ACT_CODE.items()}


class CheckpointError(ValueError):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError("string too long")
    return struct.pack("<H", len(raw)) + raw


def serialize_model(model: SplitModel) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION), _pack_str(model.owner),
             struct.pack("<H", len(model.layers))]
    for layer in model.layers:
        parts.append(_pack_str(layer.layer_id))
        parts.append(struct.pack("<BBII", _SCOPE_CODE[layer.scope],
                                 _ACT_CODE[layer.activation],
                                 layer.in_dim, layer.out_dim))
        parts.append(np.ascontiguousarray(layer.weights).astype("<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias).astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")


def deserialize_model(data: bytes) -> SplitModel:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic")
    version = r.u16()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    owner = r.string()
    count = r.u16()
    layers = []
    for _ in range(count):
        layer_id = r.string()
        scope_b, act_b, in_dim, out_dim = struct.unpack("<BBII", r.take(10))
        if scope_b not in _SCOPE_FROM or act_b not in _ACT_FROM:
            raise CheckpointError("bad scope/activation byte")
        w = np.frombuffer(r.take(8 * in_dim * out_dim), dtype="<f8").reshape(in_dim, out_dim)
        b = np.frombuffer(r.take(8 * out_dim), dtype="<f8")
        layers.append(DenseLayer(layer_id, w.copy(), b.copy(),
                                 _ACT_FROM[act_b], _SCOPE_FROM[scope_b]))
    if r.off != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    return SplitModel(owner, layers)


def save_model(model: SplitModel, path: str | Path) -> None:
    Path(path).write_bytes(serialize_model(model))


def load_model(path: str | Path) -> SplitModel:
    return deserialize_model(Path(path).read_bytes())
