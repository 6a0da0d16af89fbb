"""Synthetic scenes, multipath channels, task labels and the dataset file format."""

from .channel import (
    ChannelConfig,
    Path,
    PathSet,
    channel_response,
    csi_matrix,
    steering_vector,
    trace_paths,
)
from .dataset import Dataset, csi_rms, load_dataset, read_dataset, write_dataset
from .generate import area_filename, generate_dataset_dir
from .geometry import Scene, generate_scene, segment_hits_rect
from .labels import Labels, SampleRecord, beam_gains, build_record, generate_area, make_labels, place_ue

__all__ = [
    "ChannelConfig",
    "Dataset",
    "Labels",
    "Path",
    "PathSet",
    "SampleRecord",
    "Scene",
    "area_filename",
    "beam_gains",
    "build_record",
    "channel_response",
    "csi_matrix",
    "csi_rms",
    "generate_area",
    "generate_dataset_dir",
    "generate_scene",
    "load_dataset",
    "make_labels",
    "place_ue",
    "read_dataset",
    "segment_hits_rect",
    "steering_vector",
    "trace_paths",
    "write_dataset",
]
