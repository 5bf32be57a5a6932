"""Binary checkpoint archive: named tensors, optimizer state, config echo.

Layout (all integers little-endian):

    magic "SELR" | u32 version=1 | u32 tensor count
    per tensor: u16 name length | name UTF-8 | u8 dtype (0=f32, 1=f64)
                | u8 ndim | ndim x u32 dims | payload little-endian floats
    u32 optimizer tensor count | tensors (same encoding) | u64 adam step
    u32 config length | config JSON UTF-8 | u32 epoch index

The per-tensor dtype byte keeps 64-bit verification runs resumable without a
second format; 32-bit training checkpoints pay one byte per tensor for it.
Writes go to a temp file first and are renamed into place.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SELR"
VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointFormatError(ValueError):
    """Unreadable checkpoint: bad magic, version, or truncated data."""


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    opt_moments: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    config: dict = field(default_factory=dict)
    epoch: int = 0
    version: int = VERSION


def _write_tensor(fh, name: str, array: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.asarray(array, order="C")  # ascontiguousarray would promote 0-d to 1-d
    try:
        code = _CODES_BY_KIND[arr.dtype]
    except KeyError:
        raise CheckpointFormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<BB", code, arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())


def checkpoint_save(path: Path | str, ckpt: Checkpoint) -> None:
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<I", len(ckpt.params)))
            for name, arr in ckpt.params.items():
                _write_tensor(fh, name, arr)
            fh.write(struct.pack("<I", len(ckpt.opt_moments)))
            for name, arr in ckpt.opt_moments.items():
                _write_tensor(fh, name, arr)
            fh.write(struct.pack("<Q", ckpt.step))
            blob = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", ckpt.epoch))
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.source = source
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointFormatError(
                f"{self.source}: truncated at offset {self.offset} "
                f"(wanted {n} bytes, {len(self.data) - self.offset} left)")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_tensor(reader: _Reader) -> tuple[str, np.ndarray]:
    (name_len,) = reader.unpack("<H")
    name = reader.take(name_len).decode("utf-8")
    code, ndim = reader.unpack("<BB")
    if code not in _DTYPE_CODES:
        raise CheckpointFormatError(
            f"{reader.source}: unknown dtype code {code} at offset {reader.offset - 2}")
    dims = tuple(reader.unpack("<I")[0] for _ in range(ndim))
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims)) if dims else 1
    payload = reader.take(count * dtype.itemsize)
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    return name, arr


def checkpoint_load(path: Path | str) -> Checkpoint:
    path = Path(path)
    reader = _Reader(path.read_bytes(), str(path))
    magic = reader.take(4)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r} at offset 0")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointFormatError(
            f"{path}: unsupported version {version} at offset 4 (supported: {VERSION})")
    (n_params,) = reader.unpack("<I")
    params = dict(_read_tensor(reader) for _ in range(n_params))
    (n_opt,) = reader.unpack("<I")
    opt = dict(_read_tensor(reader) for _ in range(n_opt))
    (step,) = reader.unpack("<Q")
    (cfg_len,) = reader.unpack("<I")
    config = json.loads(reader.take(cfg_len).decode("utf-8"))
    (epoch,) = reader.unpack("<I")
    return Checkpoint(params=params, opt_moments=opt, step=step, config=config,
                      epoch=epoch, version=version)
