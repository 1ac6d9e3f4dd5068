"""Binary weight container.

Layout (little-endian)::

    magic "CSWS" | u32 version | u32 layer count
    u32 n | n bytes JSON: input shape, graph names, provenance
    per layer: u32 n | n bytes JSON descriptor | float32 arrays in descriptor order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from curbsense.nn.graph import Sequential
from curbsense.nn.layers import ShapeError, layer_from_spec

MAGIC = b"CSWS"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_LEN = struct.Struct("<I")


class WeightStoreError(ValueError):
    pass


def _block(payload: dict) -> bytes:
    raw = json.dumps(payload, sort_keys=True).encode()
    return _LEN.pack(len(raw)) + raw


def dumps(graph: Sequential, provenance: dict | None = None) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(graph.layers))]
    parts.append(_block({"input_shape": list(graph.input_shape), "provenance": provenance or {}}))
    for desc, layer in zip(graph.describe(), graph.layers):
        parts.append(_block(desc))
        for k, _ in desc["params"]:
            parts.append(np.ascontiguousarray(layer.params[k], dtype="<f4").tobytes())
    return b"".join(parts)


def save_model(graph: Sequential, path, provenance: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(graph, provenance))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightStoreError("truncated weight file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def json(self) -> dict:
        (n,) = _LEN.unpack(self.take(_LEN.size))
        try:
            return json.loads(self.take(n))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WeightStoreError(f"corrupt descriptor: {exc}") from None


def loads(buf: bytes, dtype=np.float32, expect: Sequential | None = None) -> tuple[Sequential, dict]:
    r = _Reader(buf)
    magic, version, count = _HEADER.unpack(r.take(_HEADER.size))
    if magic != MAGIC:
        raise WeightStoreError("not a weight file (bad magic)")
    if version != VERSION:
        raise WeightStoreError(f"unsupported weight file version {version}")
    head = r.json()
    layers, names, state = [], [], {}
    for _ in range(count):
        desc = r.json()
        layers.append(layer_from_spec(desc["kind"], desc["hyper"]))
        names.append(desc["name"])
        for k, shape in desc["params"]:
            n = int(np.prod(shape))
            state[f"{desc['name']}.{k}"] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
    if r.pos != len(buf):
        raise WeightStoreError("trailing bytes after last layer")
    graph = Sequential(layers, tuple(head["input_shape"]), names)
    if expect is not None and (graph.architecture() != expect.architecture() or graph.input_shape != expect.input_shape):
        raise ShapeError("stored architecture does not match the expected model")
    graph.dtype = np.dtype(dtype).type
    for n, layer in zip(graph.names, graph.layers):
        for k in layer.param_names:
            layer.params[k] = np.array(state[f"{n}.{k}"], dtype=graph.dtype)
    graph.reseed(0)
    return graph, head["provenance"]


def load_model(path, dtype=np.float32, expect: Sequential | None = None) -> tuple[Sequential, dict]:
    return loads(Path(path).read_bytes(), dtype=dtype, expect=expect)
