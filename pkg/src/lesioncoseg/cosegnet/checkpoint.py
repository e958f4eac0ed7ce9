"""``CSGW1`` weight container.

Layout (little-endian)::

    b"CSGW1"
    u32 config_length, config JSON (UTF-8)
    u32 tensor_count
    per tensor: u32 name_length, name (UTF-8), u32 ndim, ndim x u32 dims,
                prod(dims) x f32 row-major data
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np
import torch

from ..exceptions import DataError

MAGIC = b"CSGW1"


class CheckpointError(DataError):
    pass


def write_container(path, config: dict, tensors) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(
                value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else value, dtype="<f4"
            )
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_container(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise CheckpointError(f"{path}: not a CSGW1 checkpoint")
    pos = 5
    try:
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        config = json.loads(data[pos:pos + n].decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = OrderedDict()
        for _ in range(count):
            (ln,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + ln].decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            tensors[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    return config, tensors


def save_model(path, model, extra_config: dict | None = None, extra_tensors=None) -> None:
    config = {"model": model.cfg.to_dict()}
    if extra_config:
        config.update(extra_config)
    tensors = OrderedDict(model.state_dict())
    for name, value in (extra_tensors or {}).items():
        tensors[name] = value
    write_container(path, config, tensors)


def load_state(model, tensors) -> None:
    """Copy named tensors into ``model``, naming the first mismatch."""
    state = model.state_dict()
    for name, target in state.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        src = tensors[name]
        if tuple(src.shape) != tuple(target.shape):
            raise CheckpointError(
                f"tensor {name!r}: checkpoint shape {tuple(src.shape)} != model shape {tuple(target.shape)}"
            )
    with torch.no_grad():
        for name, target in state.items():
            target.copy_(torch.as_tensor(tensors[name], dtype=target.dtype))


def load_model(path):
    """Rebuild a :class:`CoSegNet` from a checkpoint; returns ``(model, config, tensors)``."""
    from .config import ModelConfig
    from .model import CoSegNet

    config, tensors = read_container(path)
    if "model" not in config:
        raise CheckpointError(f"{path}: config block has no 'model' section")
    model = CoSegNet(ModelConfig.from_dict(config["model"]))
    load_state(model, tensors)
    return model, config, tensors
