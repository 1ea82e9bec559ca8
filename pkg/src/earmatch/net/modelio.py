"""Versioned binary model container.

Layout, all integers little-endian:

    bytes 0..7    magic "EARMODEL"
    bytes 8..11   format version (uint32)
    bytes 12..19  manifest length in bytes (uint64)
    manifest      UTF-8 JSON: input shape, layer specs, tensor directory,
                  SHA-256 of the payload
    payload       concatenated float64 tensor data, directory order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from earmatch.errors import ModelFormatError, ShapeError
from earmatch.fileio import atomic_write_bytes
from earmatch.net.network import Sequential, model_from_specs

MAGIC = b"EARMODEL"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<8sIQ")


def save_model(model: Sequential, path: str | Path) -> None:
    tensors = list(model.all_tensors())
    chunks = []
    directory = []
    offset = 0
    for name, tensor in tensors:
        raw = np.ascontiguousarray(tensor, dtype="<f8").tobytes()
        directory.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "layers": model.specs(),
        "tensors": directory,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    manifest_raw = json.dumps(manifest, sort_keys=True).encode("utf-8")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest_raw))
    atomic_write_bytes(path, header + manifest_raw + payload)


def load_model(path: str | Path) -> Sequential:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ModelFormatError("file too short to hold a model header")
    magic, version, manifest_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFormatError("not a model container (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported container version {version}")
    manifest_end = _HEADER.size + manifest_len
    if len(raw) < manifest_end:
        raise ModelFormatError("truncated file: manifest incomplete")
    try:
        manifest = json.loads(raw[_HEADER.size : manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt manifest: {exc}") from exc
    for key in ("input_shape", "layers", "tensors", "payload_sha256"):
        if key not in manifest:
            raise ModelFormatError(f"manifest missing {key!r}")
    payload = raw[manifest_end:]
    expected = sum(entry["nbytes"] for entry in manifest["tensors"])
    if len(payload) < expected:
        raise ModelFormatError(
            f"truncated file: payload holds {len(payload)} of {expected} bytes"
        )
    if hashlib.sha256(payload[:expected]).hexdigest() != manifest["payload_sha256"]:
        raise ModelFormatError("payload checksum mismatch")
    try:
        model = model_from_specs(manifest["layers"], manifest["input_shape"])
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid layer manifest: {exc}") from exc
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        data = np.frombuffer(payload[start : start + nbytes], dtype="<f8")
        try:
            model.set_tensor(entry["name"], data.reshape(entry["shape"]))
        except (KeyError, ValueError, ShapeError) as exc:
            raise ModelFormatError(f"tensor {entry['name']!r} does not fit: {exc}") from exc
    return model
