"""Per-sample records: both modalities plus the five task labels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import OutageError
from ..numerics import dft_codebook, svd_principal
from .channel import ChannelConfig, PathSet, csi_matrix, trace_paths
from .geometry import GRID_SIZE, Scene, generate_scene, sample_ue_position


@dataclass(frozen=True)
class Labels:
    position: np.ndarray
    los: bool
    path_loss_db: float
    precoder: np.ndarray
    beam_index: int


@dataclass(eq=False)
class SampleRecord:
    grid: np.ndarray  # (16, 16) uint8
    bs_xy: np.ndarray
    ue_xy: np.ndarray
    csi: np.ndarray  # (n_t, n_c) complex
    position: np.ndarray
    los: bool
    path_loss_db: float
    precoder: np.ndarray
    beam_index: int

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            np.array_equal(self.grid, other.grid)
            and np.array_equal(self.bs_xy, other.bs_xy)
            and np.array_equal(self.ue_xy, other.ue_xy)
            and np.array_equal(self.csi, other.csi)
            and np.array_equal(self.position, other.position)
            and bool(self.los) == bool(other.los)
            and self.path_loss_db == other.path_loss_db
            and np.array_equal(self.precoder, other.precoder)
            and int(self.beam_index) == int(other.beam_index)
        )

    def rounded(self) -> "SampleRecord":
        """Copy with every float rounded to float32, i.e. what the dataset file can hold."""
        f32 = lambda a: np.asarray(a, np.float32).astype(np.float64)
        c64 = lambda z: np.asarray(z, np.complex64).astype(np.complex128)
        return SampleRecord(
            grid=np.asarray(self.grid, np.uint8).reshape(GRID_SIZE, GRID_SIZE),
            bs_xy=f32(self.bs_xy),
            ue_xy=f32(self.ue_xy),
            csi=c64(self.csi),
            position=f32(self.position),
            los=bool(self.los),
            path_loss_db=float(np.float32(self.path_loss_db)),
            precoder=c64(self.precoder),
            beam_index=int(self.beam_index),
        )


def beam_gains(csi: np.ndarray) -> np.ndarray:
    """Wideband gain of every DFT beam: sum over subcarriers of |c_k^H h(f)|^2."""
    c = dft_codebook(csi.shape[0])
    return np.sum(np.abs(c.conj().T @ csi) ** 2, axis=1)


def make_labels(scene: Scene, paths: PathSet, csi: np.ndarray, config: ChannelConfig) -> Labels:
    if len(paths) == 0:
        raise OutageError("no propagation paths: sample is in outage")
    power = sum(abs(p.alpha) ** 2 for p in paths)
    _, u1, _ = svd_principal(csi)
    return Labels(
        position=np.array(scene.ue_pos, dtype=np.float64),
        los=paths.has_direct,
        path_loss_db=-10.0 * math.log10(power),
        precoder=u1,
        beam_index=int(np.argmax(beam_gains(csi))),
    )


def build_record(scene: Scene, config: ChannelConfig):
    """Trace, synthesise CSI and label one placed scene; returns (record, paths) or None on outage."""
    paths = trace_paths(scene, config)
    if len(paths) == 0:
        return None
    csi = csi_matrix(paths, config)
    lab = make_labels(scene, paths, csi, config)
    s = scene.side_length
    rec = SampleRecord(
        grid=scene.occupancy_grid(),
        bs_xy=np.array(scene.bs_pos) / s,
        ue_xy=np.array(scene.ue_pos) / s,
        csi=csi,
        position=lab.position,
        los=lab.los,
        path_loss_db=lab.path_loss_db,
        precoder=lab.precoder,
        beam_index=lab.beam_index,
    )
    return rec, paths


def place_ue(scene: Scene, seed: int, area_index: int, sample_index: int, config: ChannelConfig):
    """UE position for one sample; outage draws are discarded and redrawn with a new sub-seed."""
    attempt = 0
    while True:
        gen = rngmod.stream(seed, area_index, sample_index, attempt, rngmod.UE)
        pos = sample_ue_position(scene, gen)
        if pos is not None:
            placed = scene.with_ue(pos)
            built = build_record(placed, config)
            if built is not None:
                return placed, built
        attempt += 1


def generate_area(seed: int, area_index: int, sample_indices, config: ChannelConfig):
    """Scene for ``area_index`` and one storage-precision record per sample index."""
    scene = generate_scene(seed, area_index)
    records = []
    for i in sample_indices:
        _, (rec, _) = place_ue(scene, seed, area_index, int(i), config)
        records.append(rec.rounded())
    return scene, records
