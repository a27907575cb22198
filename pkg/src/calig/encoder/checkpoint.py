"""Checkpoint file format.

Byte layout::

    CALIG-CKPT 1\\n                 magic line (ASCII)
    <N>\\n                          header length in bytes, ASCII decimal
    <N bytes of UTF-8 JSON>         header document
    <payload>                       little-endian float64 values

The header holds ``config`` (the EncoderConfig fields), ``tensors`` (ordered
manifest entries ``{name, shape, offset, count}`` where ``offset`` is a byte
offset into the payload) and ``metadata`` (free-form, e.g. the run config and
seed). Tensors are stored back to back in manifest order.
"""

from __future__ import annotations

import json
import os
from typing import Optional

import numpy as np

from calig.encoder.model import ConfigError, EncoderConfig, EncoderModel, parameter_shapes

MAGIC = b"CALIG-CKPT 1\n"


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class CheckpointIntegrityError(CheckpointError):
    def __init__(self, message: str, tensor: Optional[str] = None):
        super().__init__(message if tensor is None else f"tensor {tensor!r}: {message}")
        self.tensor = tensor


def to_bytes(model: EncoderModel, metadata: Optional[dict] = None) -> bytes:
    manifest, offset = [], 0
    for name, arr in model.params.items():
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size * 8
    header = json.dumps(
        {"config": model.config.to_dict(), "tensors": manifest, "metadata": metadata or {}},
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params.values())
    return MAGIC + f"{len(header)}\n".encode("ascii") + header + payload


def save_checkpoint(model: EncoderModel, path, metadata: Optional[dict] = None) -> None:
    data = to_bytes(model, metadata)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def from_bytes(raw: bytes) -> tuple[EncoderModel, dict]:
    """Parse a checkpoint; returns the model and its metadata dict."""
    if not raw.startswith(MAGIC):
        raise CheckpointFormatError("bad magic line", 0)
    pos = len(MAGIC)
    nl = raw.find(b"\n", pos)
    if nl < 0:
        raise CheckpointFormatError("missing header length line", pos)
    try:
        header_len = int(raw[pos:nl].decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise CheckpointFormatError("header length is not a decimal integer", pos) from None
    if header_len < 0:
        raise CheckpointFormatError("negative header length", pos)
    start = nl + 1
    if len(raw) < start + header_len:
        raise CheckpointFormatError("file ends inside the header", len(raw))
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        at = start + getattr(err, "pos", getattr(err, "start", 0))
        raise CheckpointFormatError(f"header is not valid JSON: {err}", at) from None
    if not isinstance(header, dict) or "config" not in header or "tensors" not in header:
        raise CheckpointFormatError("header lacks config or tensors", start)

    try:
        config = EncoderConfig(**header["config"])
    except (TypeError, ConfigError) as err:
        raise CheckpointIntegrityError(f"invalid config in header: {err}") from None

    payload = memoryview(raw)[start + header_len :]
    expected = parameter_shapes(config)
    entries = header["tensors"]
    names = [e.get("name") for e in entries]
    for name in expected:
        if name not in names:
            raise CheckpointIntegrityError("missing from manifest", name)
    for name in names:
        if name not in expected:
            raise CheckpointIntegrityError("not part of the configured model", name)

    params, cursor = {}, 0
    for entry in entries:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if shape != expected[name]:
            raise CheckpointIntegrityError(
                f"manifest shape {shape} disagrees with config shape {expected[name]}", name
            )
        count = int(np.prod(shape, dtype=np.int64))
        if entry.get("count", count) != count or entry.get("offset") != cursor:
            raise CheckpointIntegrityError("manifest offset/count inconsistent", name)
        end = cursor + count * 8
        if end > len(payload):
            raise CheckpointIntegrityError(
                f"payload truncated: needs {end} bytes, file has {len(payload)}", name
            )
        params[name] = np.frombuffer(payload[cursor:end], dtype="<f8").astype(np.float64).reshape(shape)
        cursor = end
    if cursor != len(payload):
        raise CheckpointIntegrityError(f"{len(payload) - cursor} trailing bytes after last tensor")
    ordered = {name: params[name] for name in expected}
    return EncoderModel(config, ordered), header.get("metadata", {})


def load_checkpoint(path, with_metadata: bool = False):
    with open(path, "rb") as fh:
        model, meta = from_bytes(fh.read())
    return (model, meta) if with_metadata else model
