"""Versioned checkpoint container.

Layout (little-endian):

    magic   b"HPWTS1"
    u32     tensor count
    u32     metadata length, then that many bytes of JSON (config hash etc.)
    per tensor:
        u16   name length, then UTF-8 name
        u8    dtype string length, then numpy dtype str (e.g. "<f4")
        u8    ndim, then u32 per dimension
        raw C-order data bytes

Round trips are bit-exact; loaders validate structure, not semantics, so a
checkpoint can be inspected without building the matching network.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

_MAGIC = b"HPWTS1"
_COUNT = struct.Struct("<I")
_META = struct.Struct("<I")
_NAME = struct.Struct("<H")
_U8 = struct.Struct("<B")
_DIM = struct.Struct("<I")


class CheckpointFormatError(ValueError):
    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    meta_b = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, _COUNT.pack(len(tensors)), _META.pack(len(meta_b)), meta_b]
    for name, arr in tensors.items():
        a = np.asarray(arr)
        if not a.flags["C_CONTIGUOUS"]:  # ascontiguousarray would turn 0-d into 1-d
            a = np.ascontiguousarray(a)
        name_b = name.encode("utf-8")
        dtype_b = a.dtype.str.encode("ascii")
        if len(name_b) > 0xFFFF or len(dtype_b) > 0xFF or a.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} does not fit the format limits")
        parts.append(_NAME.pack(len(name_b)))
        parts.append(name_b)
        parts.append(_U8.pack(len(dtype_b)))
        parts.append(dtype_b)
        parts.append(_U8.pack(a.ndim))
        for d in a.shape:
            parts.append(_DIM.pack(d))
        parts.append(a.tobytes())
    Path(path).write_bytes(b"".join(parts))


def _take(data: bytes, off: int, n: int, what: str):
    if len(data) < off + n:
        raise CheckpointFormatError(f"truncated {what}", byte_offset=len(data))
    return data[off:off + n], off + n


def load_checkpoint(path):
    """Returns (tensors dict, meta dict)."""
    data = Path(path).read_bytes()
    if data[:len(_MAGIC)] != _MAGIC:
        raise CheckpointFormatError("bad magic, not a checkpoint", byte_offset=0)
    off = len(_MAGIC)
    raw, off = _take(data, off, _COUNT.size, "header")
    (count,) = _COUNT.unpack(raw)
    raw, off = _take(data, off, _META.size, "header")
    (meta_len,) = _META.unpack(raw)
    raw, off = _take(data, off, meta_len, "metadata")
    try:
        meta = json.loads(raw.decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointFormatError("metadata is not valid JSON",
                                    byte_offset=off - meta_len) from None

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        raw, off = _take(data, off, _NAME.size, "tensor name length")
        (name_len,) = _NAME.unpack(raw)
        raw, off = _take(data, off, name_len, "tensor name")
        name = raw.decode("utf-8")
        raw, off = _take(data, off, _U8.size, "dtype length")
        (dtype_len,) = _U8.unpack(raw)
        raw, off = _take(data, off, dtype_len, "dtype")
        try:
            dtype = np.dtype(raw.decode("ascii"))
        except (TypeError, UnicodeDecodeError):
            raise CheckpointFormatError(f"bad dtype for tensor {name!r}",
                                        byte_offset=off - dtype_len) from None
        raw, off = _take(data, off, _U8.size, "ndim")
        (ndim,) = _U8.unpack(raw)
        shape = []
        for _ in range(ndim):
            raw, off = _take(data, off, _DIM.size, "shape")
            shape.append(_DIM.unpack(raw)[0])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        raw, off = _take(data, off, nbytes, f"data for tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if off != len(data):
        raise CheckpointFormatError(
            f"{len(data) - off} trailing bytes after last tensor", byte_offset=off)
    return tensors, meta


def module_tensors(module: torch.nn.Module) -> dict[str, np.ndarray]:
    """State dict as numpy arrays, ready for save_checkpoint."""
    return {name: tensor.detach().cpu().numpy().copy()
            for name, tensor in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module, tensors: dict[str, np.ndarray]):
    """Load checkpoint tensors into a module; shape/name mismatches raise ValueError."""
    state = module.state_dict()
    if set(state) != set(tensors):
        missing = sorted(set(state) - set(tensors))
        extra = sorted(set(tensors) - set(state))
        raise ValueError(
            f"checkpoint does not match model (missing {missing}, extra {extra})")
    for name, ref in state.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise ValueError(
                f"checkpoint tensor {name!r} has shape {tuple(arr.shape)}, "
                f"model expects {tuple(ref.shape)}")
    module.load_state_dict(
        {name: torch.as_tensor(arr).to(state[name].dtype)
         for name, arr in tensors.items()})
