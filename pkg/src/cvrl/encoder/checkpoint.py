"""Binary checkpoint I/O.

Layout: the 8-byte magic ``CVRLCK1\\0``, a little-endian u64 giving the length
of a UTF-8 JSON manifest, the manifest itself, then every tensor as raw
little-endian float32 in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import FormatError
from .network import TinyEncoder, TinyEncoderConfig

CHECKPOINT_MAGIC = b"CVRLCK1\x00"
_LEN = struct.Struct("<Q")


def save_tensors(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    manifest = {
        "format": 1,
        "metadata": metadata or {},
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {data[:8]!r}, expected {CHECKPOINT_MAGIC!r}")
    if len(data) < 16:
        raise FormatError("truncated checkpoint header")
    (n,) = _LEN.unpack_from(data, 8)
    if len(data) < 16 + n:
        raise FormatError(f"truncated manifest: need {n} bytes at offset 16, have {len(data) - 16}")
    try:
        manifest = json.loads(data[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}") from exc
    offset = 16 + n
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + 4 * count
        if end > len(data):
            raise FormatError(f"truncated tensor {entry['name']!r} at offset {offset}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
        offset = end
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after offset {offset}")
    return tensors, manifest.get("metadata", {})


def save_checkpoint(path, encoder: TinyEncoder, extra: dict | None = None, tensors: dict | None = None) -> None:
    """Write the encoder (and optional extra tensors, e.g. a classifier)."""
    all_tensors = encoder.state_dict()
    all_tensors.update(tensors or {})
    metadata = {"encoder": encoder.config.to_dict(), **(extra or {})}
    save_tensors(path, all_tensors, metadata)


def load_checkpoint(path, dtype: str | None = None) -> tuple[TinyEncoder, dict, dict[str, np.ndarray]]:
    """Rebuild an encoder; returns ``(encoder, metadata, extra tensors)``."""
    tensors, metadata = load_tensors(path)
    if "encoder" not in metadata:
        raise FormatError("checkpoint manifest lacks an encoder config")
    cfg = metadata["encoder"]
    if dtype is not None:
        cfg = {**cfg, "dtype": dtype}
    encoder = TinyEncoder(TinyEncoderConfig.from_dict(cfg))
    encoder.load_state_dict(tensors)
    names = set(encoder.state_dict())
    return encoder, metadata, {k: v for k, v in tensors.items() if k not in names}
