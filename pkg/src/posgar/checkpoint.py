"""Checkpoint format.

Layout: 4-byte little-endian header length, then a canonical JSON header
(format version, model config, config fingerprint, parameter manifest with
name/shape/byte offset), then the payload: every parameter as little-endian
32-bit floats, concatenated in manifest order. Training arithmetic is
64-bit; the 32-bit payload halves artifact size and the quantization error
on logits is bounded (asserted by test).
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .model import GarModel, ModelConfig

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def config_fingerprint(config):
    """Stable hash of the fully resolved model config."""
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _header(model):
    manifest = []
    offset = 0
    for name, p in model.params.items():
        manifest.append(
            {"name": name, "shape": list(p.data.shape), "offset": offset}
        )
        offset += p.data.size * 4
    return {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "fingerprint": config_fingerprint(model.config),
        "manifest": manifest,
    }, offset


def save_checkpoint(model, path, force=False):
    if os.path.exists(path) and not force:
        raise CheckpointError(f"{path} exists; pass force=True to overwrite")
    header, payload_len = _header(model)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        assert fh.tell() == 4 + len(head) + payload_len
    return path


def load_checkpoint(path, expected_config=None):
    """Rebuild a GarModel from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise CheckpointError(f"{path}: too short to contain a header length")
    (hlen,) = struct.unpack_from("<I", raw)
    if len(raw) < 4 + hlen:
        raise CheckpointError(
            f"{path}: truncated header (need {4 + hlen} bytes, have {len(raw)})"
        )
    try:
        header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} "
            f"!= supported {FORMAT_VERSION}"
        )
    config = ModelConfig.from_dict(header["config"])
    fp = config_fingerprint(config)
    if fp != header["fingerprint"]:
        raise CheckpointError(f"{path}: config fingerprint mismatch")
    if expected_config is not None and config_fingerprint(expected_config) != fp:
        raise CheckpointError(
            f"{path}: checkpoint config does not match the requested config"
        )
    payload = raw[4 + hlen :]
    expected_len = sum(
        int(np.prod(m["shape"], dtype=np.int64)) * 4 for m in header["manifest"]
    )
    if len(payload) != expected_len:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, manifest requires "
            f"{expected_len} (truncated at byte offset {len(payload)})"
        )
    model = GarModel(config)
    state = {}
    for m in header["manifest"]:
        shape = tuple(m["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        off = m["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off)
        state[m["name"]] = arr.astype(np.float64).reshape(shape)
    missing = set(model.params) - set(state)
    if missing:
        raise CheckpointError(f"{path}: manifest missing parameters {sorted(missing)}")
    model.load_state_arrays(state)
    return model
