"""Tagged binary containers for weights and training state.

Layout (little-endian): 4-byte magic, version u32, u32-length-prefixed UTF-8
JSON header, then one f32 blob per tensor in the order the header lists
them.  The header carries ``tensors: [[name, shape], ...]`` plus whatever
the caller stores next to it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DependencyError

VERSION = 1

MAGIC_ENCODERS = b"AIMW"
MAGIC_BACKBONE = b"AIMB"
MAGIC_LORA = b"AIML"
MAGIC_MODEL = b"AIMC"
MAGIC_STATE = b"AIMS"


def encode(magic: bytes, header: dict, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    header = dict(header)
    header["tensors"] = [[name, list(np.shape(arr))] for name, arr in tensors]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [magic, struct.pack("<II", VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in tensors]
    return b"".join(parts)


def decode(buf: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of :func:`encode`; tensors come back as float32 arrays."""
    if len(buf) < 12:
        raise CheckpointError(f"checkpoint too short ({len(buf)} bytes)")
    if buf[:4] != magic:
        raise CheckpointError(f"expected magic {magic!r}, found {buf[:4]!r}")
    version, jlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[12 : 12 + jlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    off = 12 + jlen
    tensors = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape, dtype=np.int64))
        if off + 4 * n > len(buf):
            raise CheckpointError(f"checkpoint truncated inside tensor {name!r}")
        tensors[name] = np.frombuffer(buf, "<f4", n, off).reshape(shape).astype(np.float32)
        off += 4 * n
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes in checkpoint")
    return header, tensors


def save(path, magic: bytes, header: dict, tensors) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode(magic, header, list(tensors)))


def load(path, magic: bytes, stage: str = "checkpoint"):
    """Read a container; a missing file is a dependency error naming ``stage``."""
    p = Path(path)
    if not p.is_file():
        raise DependencyError(stage, p)
    return decode(p.read_bytes(), magic)


def assign(params, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy stored arrays into parameter tensors, matching by name and shape."""
    for p in params:
        key = prefix + p.name
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks tensor {key!r}")
        arr = tensors[key]
        if arr.shape != p.shape:
            raise CheckpointError(f"tensor {key!r} has shape {arr.shape}, model expects {p.shape}")
        p.data = arr.astype(p.dtype)
