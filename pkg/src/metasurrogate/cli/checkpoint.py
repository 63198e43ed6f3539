"""Versioned, self-describing parameter checkpoints.

Layout::

    METASURROGATE-CHECKPOINT\\n
    format_version <int>\\n
    manifest <nbytes>\\n
    <manifest JSON, utf-8>
    <array payload, little-endian float64, concatenated>
    <sha256 of every preceding byte, 32 raw bytes>

The manifest lists each array's name, shape and byte offset into the payload,
so the file can be decoded with ``struct`` alone.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from metasurrogate.diffmath import ParamSet
from metasurrogate.errors import CheckpointError
from metasurrogate.neural_process import NPConfig

MAGIC = b"METASURROGATE-CHECKPOINT"
FORMAT_VERSION = 1
_DIGEST = 32


@dataclass
class Checkpoint:
    config: NPConfig
    params: ParamSet
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def encode(params: ParamSet, config: NPConfig, metadata: dict | None = None) -> bytes:
    arrays, payload, offset = [], [], 0
    for name, value in ParamSet(params).items():
        raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
        arrays.append({"name": name, "shape": list(value.shape), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"config": config.to_dict(), "metadata": metadata or {}, "arrays": arrays, "payload_bytes": offset},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    head = MAGIC + b"\n" + f"format_version {FORMAT_VERSION}\n".encode() + f"manifest {len(manifest)}\n".encode()
    body = head + manifest + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def checkpoint_save(params: ParamSet, config: NPConfig, path, metadata: dict | None = None) -> Path:
    path = Path(path)
    data = encode(params, config, metadata)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def _read_line(data: bytes, pos: int) -> tuple[bytes, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise CheckpointError("malformed header")
    return data[pos:end], end + 1


def _first_difference(a: dict, b: dict) -> str | None:
    for key in sorted(set(a) | set(b)):
        if a.get(key) != b.get(key):
            return key
    return None


def decode(data: bytes, expected_config: NPConfig | None = None) -> Checkpoint:
    if len(data) < _DIGEST or hashlib.sha256(data[:-_DIGEST]).digest() != data[-_DIGEST:]:
        raise CheckpointError("checksum mismatch: file is truncated or corrupt")
    body = data[:-_DIGEST]
    magic, pos = _read_line(body, 0)
    if magic != MAGIC:
        raise CheckpointError("not a metasurrogate checkpoint")
    line, pos = _read_line(body, pos)
    key, _, value = line.decode().partition(" ")
    if key != "format_version" or not value.isdigit():
        raise CheckpointError("format_version: missing")
    version = int(value)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format_version: file has {version}, this reader supports {FORMAT_VERSION}")
    line, pos = _read_line(body, pos)
    key, _, value = line.decode().partition(" ")
    if key != "manifest":
        raise CheckpointError("manifest: missing")
    n = int(value)
    manifest = json.loads(body[pos : pos + n])
    payload = body[pos + n :]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError("payload_bytes: size does not match manifest")
    try:
        config = NPConfig.from_dict(manifest["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"config: {exc}") from exc
    if expected_config is not None:
        diff = _first_difference(config.to_dict(), expected_config.to_dict())
        if diff is not None:
            raise CheckpointError(
                f"config mismatch on field {diff!r}: checkpoint has {config.to_dict().get(diff)!r}, "
                f"expected {expected_config.to_dict().get(diff)!r}"
            )
    arrays = {}
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        raw = payload[entry["offset"] : entry["offset"] + 8 * count]
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
    return Checkpoint(config, ParamSet(arrays), manifest["metadata"], version)


def checkpoint_load(path, expected_config: NPConfig | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return decode(data, expected_config)
