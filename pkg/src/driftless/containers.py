"""Byte-stable binary containers for latent sequences and weight checkpoints.

Both formats are little-endian with a fixed header so files are identical
across platforms: latent files carry (magic, version, F, D) then frame-major
float64 data; checkpoints carry (magic, version, config JSON) then named
parameter blobs sorted by name.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError
from .schedule import LatentSequence

LATENT_MAGIC = b"DLSQ"
CHECKPOINT_MAGIC = b"DLCK"
FORMAT_VERSION = 1


def save_latents(path: str | Path, seq: LatentSequence) -> None:
    data = seq.latents.astype("<f8")
    header = LATENT_MAGIC + struct.pack("<III", FORMAT_VERSION, seq.F, seq.D)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))


def load_latents(path: str | Path) -> LatentSequence:
    raw = Path(path).read_bytes()
    if raw[:4] != LATENT_MAGIC:
        raise ContractError(f"{path}: not a latent container")
    version, F, D = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported container version {version}")
    expected = 16 + F * D * 8
    if len(raw) != expected:
        raise ContractError(f"{path}: truncated payload ({len(raw)} != {expected} bytes)")
    latents = np.frombuffer(raw[16:], dtype="<f8").reshape(F, D).astype(np.float64)
    return LatentSequence.clean(latents)


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], config: dict) -> None:
    config_blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            blob = name.encode("utf-8")
            arr = np.asarray(params[name], dtype="<f8")
            if arr.ndim != 2:
                raise ContractError(f"parameter {name!r} must be 2-D, got {arr.shape}")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: not a checkpoint container")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    offset = 8
    (config_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    config = json.loads(raw[offset : offset + config_len].decode("utf-8"))
    offset += config_len
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = struct.unpack_from("<II", raw, offset)
        offset += 8
        size = rows * cols * 8
        arr = np.frombuffer(raw[offset : offset + size], dtype="<f8").reshape(rows, cols)
        offset += size
        params[name] = arr.astype(np.float64)
    if offset != len(raw):
        raise ContractError(f"{path}: trailing bytes after last parameter")
    return params, config
