"""Checkpoint file format.

Layout: 8-byte magic "EITCKPT1", an 8-byte little-endian header length,
a JSON header, then the raw little-endian tensor payloads in header order.
The header records the model config and, per tensor, shape / dtype / byte
offset into the payload region.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import LoadError
from .model import ModelConfig, Tensor, check_param_shapes, config_from_dict, \
    config_to_dict

MAGIC = b"EITCKPT1"
_DTYPES = {"f32": "<f4", "f64": "<f8"}


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise LoadError(f"unsupported dtype {arr.dtype}")


def save(path, params: dict[str, Tensor], config: ModelConfig):
    tensors = {}
    offset = 0
    payloads = []
    for name, t in params.items():
        raw = np.ascontiguousarray(t.data, dtype=f"<{t.data.dtype.kind}{t.data.dtype.itemsize}")
        tensors[name] = {"shape": list(t.shape), "dtype": _dtype_tag(t.data),
                         "offset": offset}
        payloads.append(raw.tobytes())
        offset += len(payloads[-1])
    header = json.dumps({"config": config_to_dict(config),
                         "tensors": tensors}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in payloads:
            f.write(blob)


def load(path) -> tuple[dict[str, Tensor], ModelConfig]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise LoadError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:8] != MAGIC:
        raise LoadError(f"{path}: bad magic, not a checkpoint")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + hlen])
        config = config_from_dict(header["config"])
    except Exception as e:
        raise LoadError(f"{path}: malformed header: {e}") from e
    payload = blob[16 + hlen:]
    params = {}
    for name, meta in header["tensors"].items():
        dt = np.dtype(_DTYPES[meta["dtype"]])
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        end = start + count * dt.itemsize
        if end > len(payload):
            raise LoadError(f"{path}: tensor {name} payload out of range")
        data = np.frombuffer(payload[start:end], dtype=dt).reshape(shape)
        params[name] = Tensor(data.astype(data.dtype.newbyteorder("=")),
                              requires_grad=True)
    try:
        check_param_shapes(params, config)
    except Exception as e:
        raise LoadError(f"{path}: tensors do not match config: {e}") from e
    return params, config
