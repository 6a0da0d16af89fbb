"""Binary dataset files.

Layout (little-endian): ``b"AIMM"``, version u32, n_records u32, n_t u16,
n_c u16, u32-length-prefixed UTF-8 JSON metadata, then fixed-size records:
256 B occupancy grid, bs_xy 2xf32, ue_xy 2xf32, csi 2*n_t*n_c xf32
(antenna-major, re/im interleaved), position 2xf32, los u8,
path_loss_db f32, precoder 2*n_t xf32, beam_index u16.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..numerics import from_interleaved, to_interleaved
from .geometry import GRID_SIZE
from .labels import SampleRecord

MAGIC = b"AIMM"
VERSION = 1
_HEAD = struct.Struct("<4sIIHH")


def record_dtype(n_t: int, n_c: int) -> np.dtype:
    return np.dtype([
        ("grid", "u1", (GRID_SIZE * GRID_SIZE,)),
        ("bs_xy", "<f4", (2,)),
        ("ue_xy", "<f4", (2,)),
        ("csi", "<f4", (2 * n_t * n_c,)),
        ("position", "<f4", (2,)),
        ("los", "u1"),
        ("path_loss_db", "<f4"),
        ("precoder", "<f4", (2 * n_t,)),
        ("beam_index", "<u2"),
    ])


@dataclass
class Dataset:
    """Column-oriented view of a dataset file, convenient for batching."""

    grid: np.ndarray
    bs_xy: np.ndarray
    ue_xy: np.ndarray
    csi: np.ndarray
    position: np.ndarray
    los: np.ndarray
    path_loss_db: np.ndarray
    precoder: np.ndarray
    beam_index: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.beam_index)

    @property
    def n_t(self) -> int:
        return self.csi.shape[1]

    @property
    def n_c(self) -> int:
        return self.csi.shape[2]

    @classmethod
    def from_records(cls, records, metadata=None) -> "Dataset":
        return cls(
            grid=np.stack([r.grid for r in records]).astype(np.uint8),
            bs_xy=np.stack([r.bs_xy for r in records]),
            ue_xy=np.stack([r.ue_xy for r in records]),
            csi=np.stack([r.csi for r in records]),
            position=np.stack([r.position for r in records]),
            los=np.array([bool(r.los) for r in records]),
            path_loss_db=np.array([r.path_loss_db for r in records], dtype=np.float64),
            precoder=np.stack([r.precoder for r in records]),
            beam_index=np.array([r.beam_index for r in records], dtype=np.int64),
            metadata=dict(metadata or {}),
        )

    def records(self) -> list[SampleRecord]:
        return [
            SampleRecord(self.grid[i], self.bs_xy[i], self.ue_xy[i], self.csi[i], self.position[i],
                         bool(self.los[i]), float(self.path_loss_db[i]), self.precoder[i],
                         int(self.beam_index[i]))
            for i in range(len(self))
        ]

    def environment_inputs(self) -> np.ndarray:
        """(N, 260): flattened occupancy grid, BS xy, UE xy, all in [0, 1]."""
        n = len(self)
        return np.concatenate([self.grid.reshape(n, -1).astype(np.float64), self.bs_xy, self.ue_xy], axis=1)

    def channel_inputs(self, scale: float) -> np.ndarray:
        """(N, 2*n_t*n_c): CSI divided by ``scale``, antenna-major, re/im interleaved."""
        n = len(self)
        return to_interleaved(self.csi.reshape(n, -1)) / scale

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.grid[idx], self.bs_xy[idx], self.ue_xy[idx], self.csi[idx], self.position[idx],
                       self.los[idx], self.path_loss_db[idx], self.precoder[idx], self.beam_index[idx],
                       dict(self.metadata))

    @staticmethod
    def concatenate(parts) -> "Dataset":
        parts = list(parts)
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
        names = ("grid", "bs_xy", "ue_xy", "csi", "position", "los", "path_loss_db", "precoder", "beam_index")
        meta = dict(parts[0].metadata)
        meta["parts"] = [p.metadata for p in parts]
        return Dataset(*[cat(n) for n in names], metadata=meta)


def csi_rms(csi: np.ndarray) -> float:
    """Root-mean-square entry magnitude over a stack of CSI matrices."""
    return float(np.sqrt(np.mean(np.abs(csi) ** 2)))


def _pack(records, n_t: int, n_c: int) -> np.ndarray:
    arr = np.zeros(len(records), dtype=record_dtype(n_t, n_c))
    for i, r in enumerate(records):
        arr["grid"][i] = np.asarray(r.grid, np.uint8).reshape(-1)
        arr["bs_xy"][i] = r.bs_xy
        arr["ue_xy"][i] = r.ue_xy
        arr["csi"][i] = to_interleaved(np.asarray(r.csi, np.complex128).reshape(-1))
        arr["position"][i] = r.position
        arr["los"][i] = 1 if r.los else 0
        arr["path_loss_db"][i] = r.path_loss_db
        arr["precoder"][i] = to_interleaved(np.asarray(r.precoder, np.complex128))
        arr["beam_index"][i] = r.beam_index
    return arr


def encode_dataset(records, metadata=None) -> bytes:
    records = list(records)
    if not records:
        raise ValueError("refusing to write an empty dataset")
    n_t, n_c = np.asarray(records[0].csi).shape
    blob = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = _HEAD.pack(MAGIC, VERSION, len(records), n_t, n_c) + struct.pack("<I", len(blob)) + blob
    return head + _pack(records, n_t, n_c).tobytes()


def write_dataset(records, path, metadata=None) -> None:
    Path(path).write_bytes(encode_dataset(records, metadata))


def decode_dataset(buf: bytes):
    """Parse dataset bytes into ``(Dataset, metadata)``; raises FormatError with a byte offset."""
    if len(buf) < _HEAD.size + 4:
        if buf[:4] != MAGIC[: len(buf[:4])]:
            raise FormatError("bad magic", 0)
        raise FormatError("truncated header", len(buf))
    magic, version, n_records, n_t, n_c = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (jlen,) = struct.unpack_from("<I", buf, _HEAD.size)
    start = _HEAD.size + 4
    if start + jlen > len(buf):
        raise FormatError("truncated metadata", len(buf))
    try:
        meta = json.loads(buf[start : start + jlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}", start) from exc
    body = start + jlen
    dt = record_dtype(n_t, n_c)
    expected = n_records * dt.itemsize
    have = len(buf) - body
    if have < expected:
        raise FormatError(
            f"truncated: header promises {n_records} records of {dt.itemsize} bytes, file holds {have}",
            body + (have // dt.itemsize) * dt.itemsize,
        )
    if have > expected:
        raise FormatError(f"{have - expected} trailing bytes after the last record", body + expected)
    arr = np.frombuffer(buf, dtype=dt, count=n_records, offset=body)
    data = Dataset(
        grid=arr["grid"].reshape(n_records, GRID_SIZE, GRID_SIZE).copy(),
        bs_xy=arr["bs_xy"].astype(np.float64),
        ue_xy=arr["ue_xy"].astype(np.float64),
        csi=from_interleaved(arr["csi"].astype(np.float64)).reshape(n_records, n_t, n_c),
        position=arr["position"].astype(np.float64),
        los=arr["los"].astype(bool),
        path_loss_db=arr["path_loss_db"].astype(np.float64),
        precoder=from_interleaved(arr["precoder"].astype(np.float64)),
        beam_index=arr["beam_index"].astype(np.int64),
        metadata=meta,
    )
    return data, meta


def load_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())[0]


def read_dataset(path):
    """Records and metadata of a dataset file."""
    data, meta = decode_dataset(Path(path).read_bytes())
    return data.records(), meta
