"""Trajectory data model, Geolife I/O, synthesis and segmentation."""

from .geo import EARTH_RADIUS_KM, haversine_array, haversine_km, path_length_km, step_lengths_km
from .geolife import (MODE_ALIASES, load_geolife, parse_geolife_labels, parse_geolife_plt,
                      serialize_geolife_plt, split_by_labels)
from .segments import CADENCE_S, denormalize, segment_latlon, segment_trajectory
from .store import read_dataset, write_dataset, write_segments_csv
from .synth import PROFILES, synth_dataset, synth_trajectories
from .types import (BEIJING, MODES, SEQ_LEN, GpsPoint, NormalizationSpec, Segment,
                    SegmentBatch, Trajectory, TravelMode, batch_segments, make_segment)

__all__ = [
    "GpsPoint", "Trajectory", "TravelMode", "NormalizationSpec", "Segment", "SegmentBatch",
    "MODES", "SEQ_LEN", "BEIJING", "CADENCE_S", "EARTH_RADIUS_KM", "PROFILES",
    "haversine_km", "haversine_array", "step_lengths_km", "path_length_km",
    "parse_geolife_plt", "serialize_geolife_plt", "parse_geolife_labels",
    "split_by_labels", "load_geolife", "MODE_ALIASES",
    "segment_trajectory", "denormalize", "segment_latlon",
    "synth_dataset", "synth_trajectories",
    "write_dataset", "read_dataset", "write_segments_csv",
    "batch_segments", "make_segment",
]
