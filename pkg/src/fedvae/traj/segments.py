"""Cutting trajectories into fixed-length masked segments and back."""

import math
import warnings

import numpy as np

from ..errors import ClampedPoints, EmptyTrajectory, MissingLabel
from .types import SEQ_LEN, GpsPoint, Trajectory, make_segment

CADENCE_S = 30


def segment_trajectory(traj, spec, seq_len=SEQ_LEN, min_valid=1, traj_id=None):
    """Split ``traj`` into ``ceil(m / seq_len)`` normalized segments.

    The final segment is zero-padded; its mask records the valid prefix.
    Segments with fewer than ``min_valid`` points are dropped. Points outside
    the bounding box are clamped onto it and reported with a ClampedPoints warning.
    """
    if not isinstance(traj, Trajectory) or len(traj) == 0:
        raise EmptyTrajectory("cannot segment an empty trajectory")
    if traj.mode is None:
        raise MissingLabel("trajectory has no travel-mode label")
    unit = spec.normalize(traj.latlon())
    clamped = np.clip(unit, 0.0, 1.0)
    n_out = int(np.sum(np.any(clamped != unit, axis=1)))
    if n_out:
        warnings.warn(f"{n_out} point(s) outside the bounding box were clamped", ClampedPoints)
    base = traj.user_id if traj_id is None else traj_id
    segments = []
    for k in range(math.ceil(len(clamped) / seq_len)):
        chunk = clamped[k * seq_len:(k + 1) * seq_len]
        if len(chunk) < min_valid:
            continue
        segments.append(make_segment(chunk, traj.mode, traj.user_id,
                                     seg_id=f"{base}:{k}", seq_len=seq_len))
    return segments


def denormalize(seg_coords, spec, mask=None, t0=0, cadence_s=CADENCE_S):
    """Map unit-square coordinates back to GPS points with synthetic timestamps."""
    coords = np.asarray(seg_coords, dtype=np.float64)
    n = len(coords) if mask is None else int(np.asarray(mask).sum())
    latlon = spec.denormalize(np.clip(coords[:n], 0.0, 1.0))
    return [GpsPoint(float(lat), float(lon), int(t0 + i * cadence_s))
            for i, (lat, lon) in enumerate(latlon)]


def segment_latlon(seg, spec):
    """Valid points of a segment as an (n, 2) lat/lon array."""
    return spec.denormalize(seg.valid_coords)
