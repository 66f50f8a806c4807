"""Binary checkpoints: header, config, then named little-endian float32 tensors.

Layout::

    magic "SSMK" | u32 version | 32-byte sha256 of the config | u32 n_classes
    u32 config_len | config JSON | u32 n_tensors
    repeated: u16 name_len | name | u8 ndim | u32 dims... | float32 data
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .model import ModelConfig, ModelParams

MAGIC = b"SSMK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(params: ModelParams) -> bytes:
    cfg = params.config
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), cfg.digest(),
             struct.pack("<II", cfg.n_classes, len(cfg_json)), cfg_json,
             struct.pack("<I", len(params.tensors))]
    for name in sorted(params.tensors):
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f4")
        encoded = name.encode()
        parts.append(struct.pack("<HB", len(encoded), arr.ndim) + encoded)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes) -> ModelParams:
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = bytes(take(32))
    n_classes, cfg_len = struct.unpack("<II", take(8))
    cfg = ModelConfig(**json.loads(bytes(take(cfg_len))))
    if cfg.digest() != digest or cfg.n_classes != n_classes:
        raise CheckpointError("config hash mismatch")
    (n_tensors,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(n_tensors):
        name_len, ndim = struct.unpack("<HB", take(3))
        name = bytes(take(name_len)).decode()
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = data.astype(np.float64)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint")
    return ModelParams(cfg, tensors)


def save_checkpoint(path, params: ModelParams) -> str:
    """Write the checkpoint; returns its sha256 hex digest."""
    blob = to_bytes(params)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def file_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
