"""Model container format.

Layout (all integers little-endian)::

    b"QFM1" | u16 format version | u32 header length | JSON header
    | float64 tensors in header order | u32 CRC-32 of everything before it

The JSON header holds the model spec, tensor names and shapes and free-form
metadata (feature config, training config, seed).
"""
from __future__ import annotations

import json
import struct
import zlib
from collections import OrderedDict
from typing import Optional

import numpy as np

from .model import Model, ModelSpec

MAGIC = b"QFM1"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def save_model(model: Model) -> bytes:
    tensors = OrderedDict(("param/" + k, v) for k, v in model.params.items())
    tensors["norm/mean"] = model.mean
    tensors["norm/scale"] = model.scale
    header = {
        "spec": model.spec.as_dict(),
        "tensors": [[name, list(t.shape)] for name, t in tensors.items()],
        "meta": model.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in tensors.values())
    blob = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(hbytes)) + hbytes + body
    return blob + struct.pack("<I", zlib.crc32(blob))


def load_model(data: bytes, expected_spec: Optional[ModelSpec] = None) -> Model:
    data = bytes(data)
    if len(data) < 14 or data[:4] != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise ModelFileError("model file is corrupt (CRC mismatch)")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model file version {version}")
    try:
        header = json.loads(data[10:10 + hlen])
        spec = ModelSpec.from_dict(header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFileError(f"bad model header: {exc}") from None
    if expected_spec is not None and spec != expected_spec:
        raise ModelFileError(f"model file holds {spec}, expected {expected_spec}")
    pos = 10 + hlen
    tensors = OrderedDict()
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) * 8
        if pos + n > len(data) - 4:
            raise ModelFileError("model file is truncated")
        tensors[name] = np.frombuffer(data, "<f8", count=n // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += n
    if pos != len(data) - 4:
        raise ModelFileError("trailing bytes in model file")
    params = OrderedDict((k[6:], v) for k, v in tensors.items() if k.startswith("param/"))
    expected = spec.param_shapes()
    if list(params) != list(expected) or any(params[k].shape != expected[k] for k in expected):
        raise ModelFileError("tensor layout does not match the embedded model spec")
    return Model(spec, params, tensors["norm/mean"], tensors["norm/scale"], header.get("meta", {}))


def save_model_file(path, model: Model) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(model))


def load_model_file(path, expected_spec: Optional[ModelSpec] = None) -> Model:
    with open(path, "rb") as fh:
        return load_model(fh.read(), expected_spec)
