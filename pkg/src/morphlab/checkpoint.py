"""Versioned binary checkpoint container.

Layout: magic ``MLCK``, uint32 format version, uint64 header length, a
deterministic JSON header (config, record names, data checksum,
parameter count), then one shape-prefixed record per tensor:

    [u32 name_len][name utf8][u32 ndim][u32 dims...][float32-LE data]

Everything about the writer is deterministic, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MLCK"
VERSION = 1


@dataclass
class NetworkParams:
    """Loaded parameter records plus integrity metadata."""

    records: dict
    param_count: int
    checksum: str

    def __post_init__(self):
        for name, arr in self.records.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"record {name!r} contains non-finite values")


def _encode_records(records: dict) -> bytes:
    chunks = []
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def save_checkpoint(path, config: dict, records: dict) -> NetworkParams:
    """Write a checkpoint; records is an ordered name -> array mapping."""
    data = _encode_records(records)
    checksum = hashlib.sha256(data).hexdigest()
    param_count = int(sum(np.asarray(a).size for a in records.values()))
    header = json.dumps(
        {
            "config": config,
            "record_names": list(records.keys()),
            "checksum": checksum,
            "param_count": param_count,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(data)
    return NetworkParams(records=dict(records), param_count=param_count,
                         checksum=checksum)


def load_checkpoint(path):
    """Read a checkpoint; returns (config, NetworkParams)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    data = raw[16 + header_len:]
    if hashlib.sha256(data).hexdigest() != header["checksum"]:
        raise ValueError(f"{path}: checksum mismatch, file corrupted")

    records = {}
    offset = 0
    for expected_name in header["record_names"]:
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        if name != expected_name:
            raise ValueError(f"{path}: record order mismatch ({name} != {expected_name})")
        records[name] = arr.reshape(shape).copy()
    params = NetworkParams(records=records, param_count=header["param_count"],
                           checksum=header["checksum"])
    return header["config"], params


def modules_to_records(modules: dict) -> dict:
    """Flatten named torch modules into checkpoint records."""
    records = {}
    for prefix, module in modules.items():
        for key, tensor in module.state_dict().items():
            records[f"{prefix}.{key}"] = tensor.detach().cpu().numpy()
    return records


def load_into_modules(params: NetworkParams, modules: dict):
    """Restore checkpoint records into named torch modules."""
    import torch

    for prefix, module in modules.items():
        state = {}
        want = f"{prefix}."
        for name, arr in params.records.items():
            if name.startswith(want):
                state[name[len(want):]] = torch.from_numpy(arr.copy())
        module.load_state_dict(state)
