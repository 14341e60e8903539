"""Versioned binary model files (``.pcnn``).

Layout, all integers little-endian::

    b"PCNN"                      magic
    u32 version                  currently 1
    u32 input_h, input_w, input_c, num_classes, n_blocks
    n_blocks x (u32 filters, u32 pool)
    float32 blobs                in state_names(arch) order, C-contiguous
    u32 crc32                    over every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .nn.model import ArchSpec, Block, Model, param_shapes, state_names

MAGIC = b"PCNN"
VERSION = 1
_U32 = struct.Struct("<I")
_HEADER = struct.Struct("<4sI5I")
_BLOCK = struct.Struct("<II")


class ModelFileError(ValueError):
    """Base class for unreadable model files."""


class BadMagicError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TruncatedModelError(ModelFileError):
    pass


def model_to_bytes(model: Model) -> bytes:
    arch = model.arch
    out = bytearray(
        _HEADER.pack(MAGIC, VERSION, arch.input_h, arch.input_w, arch.input_c,
                     arch.num_classes, len(arch.blocks))
    )
    for b in arch.blocks:
        out += _BLOCK.pack(b.filters, int(b.pool))
    for arr in model.state().values():
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += _U32.pack(zlib.crc32(out))
    return bytes(out)


def _parse_arch(data: bytes) -> tuple[ArchSpec, int]:
    if len(data) < _HEADER.size:
        raise TruncatedModelError("model file truncated inside the header")
    _, _, h, w, c, k, n_blocks = _HEADER.unpack_from(data)
    end = _HEADER.size + n_blocks * _BLOCK.size
    if len(data) < end:
        raise TruncatedModelError("model file truncated inside the block list")
    blocks = [Block(f, bool(p)) for f, p in _BLOCK.iter_unpack(data[_HEADER.size:end])]
    try:
        arch = ArchSpec(h, w, c, k, tuple(blocks))
        param_shapes(arch)
    except ValueError as exc:
        raise ModelFileError(f"invalid architecture descriptor: {exc}") from exc
    return arch, end


def model_from_bytes(data: bytes) -> Model:
    if data[:4] != MAGIC:
        raise BadMagicError("not a model file (bad magic)")
    if len(data) < 8:
        raise TruncatedModelError("model file truncated before the version field")
    (version,) = _U32.unpack_from(data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported model format version {version} (expected {VERSION})")

    crc_ok = len(data) >= 4 and zlib.crc32(data[:-4]) == _U32.unpack_from(data, len(data) - 4)[0]
    if not crc_ok:
        # a short file also fails the CRC; report it as truncation when the header says so
        try:
            arch, offset = _parse_arch(data)
            expected = offset + 4 * sum(int(np.prod(s)) for s in param_shapes(arch).values()) + 4
        except TruncatedModelError:
            raise
        except ModelFileError:
            expected = None
        if expected is not None and len(data) < expected:
            raise TruncatedModelError(f"model file truncated: {len(data)} of {expected} bytes")
        raise ChecksumError("model file CRC mismatch (file is corrupted)")

    arch, offset = _parse_arch(data[:-4])
    shapes = param_shapes(arch)
    payload = data[:-4]
    state = {}
    for name in state_names(arch):
        shape = shapes[name]
        n = int(np.prod(shape))
        if offset + 4 * n > len(payload):
            raise TruncatedModelError(f"model file truncated in blob {name}")
        state[name] = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).astype(np.float32).reshape(shape)
        offset += 4 * n
    if offset != len(payload):
        raise ModelFileError(f"{len(payload) - offset} unexpected trailing bytes in model file")

    buffers = {k: v for k, v in state.items() if "running" in k}
    params = {k: v for k, v in state.items() if "running" not in k}
    return Model(arch, params, buffers, mode="infer")


def save_model(model: Model, path) -> None:
    data = model_to_bytes(model)
    with open(os.fspath(path), "wb") as fh:
        fh.write(data)


def load_model(path) -> Model:
    """Read a ``.pcnn`` file; the returned model is in inference mode."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
