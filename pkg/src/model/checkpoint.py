"""
Checkpoint Container

Binary layout of one slice snapshot:
    b"DBTM" | uint32 format version | uint32 header length | JSON header | tensor bytes
The JSON header carries dims (D, K, V, B, T), the config digest, free-form
metadata and a tensor index (name, shape, byte offset). Tensors are raw
little-endian float64. Writes go to a temp file first and are renamed into
place, so a reader never sees a half-written snapshot.
"""

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from src.errors import CheckpointError

LOG = logging.getLogger(__name__)

MAGIC = b"DBTM"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
_PREFIX = struct.Struct("<4sII")
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    dims: Dict[str, int] = field(default_factory=dict)
    config_digest: str = ""
    meta: Dict[str, Any] = field(default_factory=dict)


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temp_path, path)
    except Exception:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """
    Serialize a checkpoint atomically

    Args:
        checkpoint: Tensors plus header fields
        path: Destination file

    Returns:
        The written path
    """
    path = Path(path)
    index, chunks, offset = [], [], 0
    for name in sorted(checkpoint.tensors):
        array = np.asarray(checkpoint.tensors[name], dtype=_DTYPE)
        data = array.tobytes(order="C")
        index.append({"name": name, "shape": list(array.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)

    header = json.dumps({
        "dims": checkpoint.dims,
        "config_digest": checkpoint.config_digest,
        "meta": checkpoint.meta,
        "tensors": index,
        "payload_bytes": offset,
    }, sort_keys=True).encode("utf-8")
    payload = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    _atomic_write(path, payload)
    return path


def load_checkpoint(path: Union[str, Path], config_digest: Optional[str] = None) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint

    Args:
        path: Checkpoint file
        config_digest: Digest of the current config; a mismatch only warns

    Returns:
        Checkpoint with bit-exact tensors
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated before the header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} is not supported (reader version {FORMAT_VERSION})")
    body_start = _PREFIX.size + header_len
    if len(raw) < body_start:
        raise CheckpointError(f"{path}: truncated inside the header")
    try:
        header = json.loads(raw[_PREFIX.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from e
    if len(raw) != body_start + header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(raw) - body_start} bytes, "
                              f"header declares {header['payload_bytes']}")

    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = body_start + entry["offset"]
        tensors[entry["name"]] = np.frombuffer(raw, dtype=_DTYPE, count=count, offset=start) \
            .reshape(tuple(entry["shape"])).astype(np.float64)

    stored = header.get("config_digest", "")
    if config_digest is not None and stored != config_digest:
        LOG.warning("%s was written under config digest %s..., current config is %s...; "
                    "proceeding with the stored config", path, stored[:12], config_digest[:12])
    return Checkpoint(tensors=tensors, dims=header.get("dims", {}), config_digest=stored,
                      meta=header.get("meta", {}))


def write_manifest(run_dir: Union[str, Path], manifest: Dict[str, Any]) -> Path:
    """Atomically write the run manifest (slices, rho/gamma histories, digest, timings)."""
    path = Path(run_dir) / MANIFEST_NAME
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"))
    return path


def read_manifest(run_dir: Union[str, Path]) -> Optional[Dict[str, Any]]:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        return None
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
