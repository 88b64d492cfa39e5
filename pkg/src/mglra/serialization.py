"""Versioned flat binary model files.

Layout (little endian)::

    magic       8 bytes  b"MGLRA\\x00\\x00\\x01"
    version     u32
    config_hash 32 bytes sha256 of the canonical config JSON
    config_len  u32, then that many bytes of UTF-8 JSON
    n_blocks    u32
    per block:  name_len u16, name, ndim u8, shape (u32 each), float64 data
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"MGLRA\x00\x00\x01"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def config_hash(config: dict) -> bytes:
    return hashlib.sha256(canonical_json(config)).digest()


def save_params(path: Union[str, Path], config: dict, params: dict) -> None:
    blob = canonical_json(config)
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), config_hash(config),
             struct.pack("<I", len(blob)), blob, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_params(path: Union[str, Path]) -> tuple[dict, dict]:
    buf = Path(path).read_bytes()
    try:
        return _parse(path, buf)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: truncated or corrupt model file ({exc})") from None


def _parse(path, buf: bytes) -> tuple[dict, dict]:
    if buf[:8] != MAGIC:
        raise ModelFormatError(f"{path}: not an MGLRA model file")
    pos = 8
    (version,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: model format version {version}, this code reads version {FORMAT_VERSION}")
    digest = buf[pos:pos + 32]
    pos += 32
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    config = json.loads(buf[pos:pos + n])
    pos += n
    if config_hash(config) != digest:
        raise ModelFormatError(f"{path}: config hash mismatch")
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + ln].decode()
        pos += ln
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        if pos + 8 * size > len(buf):
            raise ModelFormatError(f"{path}: truncated model file (block {name!r})")
        params[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ModelFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return config, params
