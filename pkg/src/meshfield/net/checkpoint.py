"""Checkpoint files.

Layout (little-endian): magic ``b"SITH"``, u32 format version, u32 length
of the config blob, the network config as canonical JSON (UTF-8), u64
parameter count, then the parameters as float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import FieldModel, NetworkConfig
from .params import ParameterSet

MAGIC = b"SITH"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(config: NetworkConfig, params: ParameterSet) -> bytes:
    blob = config.to_json().encode("utf-8")
    expected = FieldModel(config).new_params().size
    if params.size != expected:
        raise CheckpointError(f"parameter count {params.size} does not match config ({expected})")
    head = MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + struct.pack("<Q", params.size)
    return head + params.flat.astype("<f4").tobytes()


def save_checkpoint(path, config: NetworkConfig, params: ParameterSet) -> None:
    Path(path).write_bytes(encode_checkpoint(config, params))


def decode_checkpoint(data: bytes, expected: NetworkConfig | None = None):
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    blob = data[12:12 + n].decode("utf-8")
    config = NetworkConfig.from_dict(json.loads(blob))
    if expected is not None and config.to_json() != expected.to_json():
        raise CheckpointError("checkpoint network config does not match the requested config")
    (count,) = struct.unpack_from("<Q", data, 12 + n)
    off = 12 + n + 8
    if len(data) - off != 4 * count:
        raise CheckpointError("checkpoint payload is truncated or oversized")
    model = FieldModel(config)
    shapes = model.shapes()
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32)
    try:
        params = ParameterSet(shapes, flat=flat)
    except ValueError as e:
        raise CheckpointError(str(e)) from None
    return config, params


def load_checkpoint(path, expected: NetworkConfig | None = None):
    """(NetworkConfig, ParameterSet); rejects a config differing from ``expected``."""
    return decode_checkpoint(Path(path).read_bytes(), expected)
