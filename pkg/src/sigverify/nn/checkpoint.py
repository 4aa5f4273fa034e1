"""Binary model checkpoints.

Layout (little-endian)::

    b"SVMD" | u32 version | u32 n_params
    n_params x ( u16 name_len | name | u8 rank | rank x u32 extent | float32 values )
    key=value config lines (ASCII, LF separated) until end of file
"""
from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

MAGIC = b"SVMD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(params: Mapping[str, np.ndarray], config: Mapping[str, object]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("ascii")
        arr = np.asarray(value, dtype="<f4")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    for key, value in config.items():
        line = f"{key}={value}"
        if "\n" in line or "=" in str(key):
            raise CheckpointError(f"config entry {key!r} cannot be encoded")
        chunks.append(line.encode("ascii") + b"\n")
    return b"".join(chunks)


def loads_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not an SVMD checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    params: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + n].decode("ascii")
            off += n
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            params[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    config = {}
    for line in blob[off:].decode("ascii").splitlines():
        if line:
            key, _, value = line.partition("=")
            config[key] = value
    return params, config


def save_checkpoint(path, params, config) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(params, config))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
