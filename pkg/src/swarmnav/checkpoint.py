"""Versioned binary container for model parameters and optimizer state.

Byte layout (all integers little-endian):

    bytes 0..7    magic ``b"SWNVCKPT"``
    bytes 8..11   uint32 format version (currently 1)
    bytes 12..19  uint64 header length H
    bytes 20..20+H-1  UTF-8 JSON header (sorted keys, no whitespace)
    remainder     raw tensor data, float64 little-endian, concatenated in
                  header order

The JSON header carries the config hash, the full config document, run
metadata (training scenario ids, update index), the optimizer step count,
and one record per tensor: name, kind (param / adam_m / adam_v), shape, and
byte offset into the data section. Identical parameters therefore produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFile, FormatVersionMismatch
from .nn import ParamStore

MAGIC = b"SWNVCKPT"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<8sIQ")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class CheckpointData:
    config: dict
    meta: dict
    config_hash: str
    snapshot: dict  # params / adam_m / adam_v / step_count, see ParamStore


def save_checkpoint(path, store: ParamStore, config: dict, meta: dict | None = None) -> None:
    snap = store.snapshot()
    records = []
    chunks = []
    offset = 0
    for kind in ("params", "adam_m", "adam_v"):
        kind_name = {"params": "param", "adam_m": "adam_m", "adam_v": "adam_v"}[kind]
        for name, arr in snap[kind].items():
            raw = np.asarray(arr, dtype="<f8").tobytes()
            records.append(
                {
                    "name": name,
                    "kind": kind_name,
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            chunks.append(raw)
            offset += len(raw)
    header = {
        "config": config,
        "config_hash": config_hash(config),
        "meta": meta or {},
        "step_count": snap["step_count"],
        "tensors": records,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEAD.size:
        raise CorruptFile(f"{path}: file shorter than fixed header", offset=len(data))
    magic, version, header_len = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    head_end = _HEAD.size + header_len
    if len(data) < head_end:
        raise CorruptFile(f"{path}: truncated JSON header", offset=len(data))
    try:
        header = json.loads(data[_HEAD.size : head_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable header ({exc})", offset=_HEAD.size) from exc

    body = data[head_end:]
    snapshot: dict = {"params": {}, "adam_m": {}, "adam_v": {}, "step_count": header["step_count"]}
    kind_key = {"param": "params", "adam_m": "adam_m", "adam_v": "adam_v"}
    for rec in header["tensors"]:
        start, nbytes = rec["offset"], rec["nbytes"]
        if start + nbytes > len(body):
            raise CorruptFile(
                f"{path}: tensor {rec['name']!r} extends past end of file",
                offset=head_end + len(body),
            )
        arr = np.frombuffer(body[start : start + nbytes], dtype="<f8").reshape(rec["shape"]).copy()
        snapshot[kind_key[rec["kind"]]][rec["name"]] = arr
    return CheckpointData(
        config=header["config"],
        meta=header["meta"],
        config_hash=header["config_hash"],
        snapshot=snapshot,
    )
