"""Dataset persistence: the ``FTRJ1`` columnar container and CSV exports.

``FTRJ1`` layout (integers little-endian)::

    b"FTRJ1"                      5 bytes magic
    uint32 header_length
    header                        UTF-8 JSON
    coords   float64 '<f8'        n * seq_len * 2
    mask     uint8                n * seq_len
    modes    uint8                n            (index into TravelMode order)

The header carries ``{"format", "version", "count", "seq_len", "normalization",
"user_ids", "seg_ids", "meta"}``.
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .types import MODES, NormalizationSpec, Segment

MAGIC = b"FTRJ1"
VERSION = 1


def write_dataset(path, segments, spec, meta=None):
    segments = list(segments)
    seq_len = segments[0].coords.shape[0] if segments else 100
    header = {
        "format": "FTRJ1",
        "version": VERSION,
        "count": len(segments),
        "seq_len": seq_len,
        "normalization": spec.to_dict() if spec is not None else None,
        "user_ids": [s.user_id for s in segments],
        "seg_ids": [s.seg_id for s in segments],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    coords = np.zeros((len(segments), seq_len, 2))
    mask = np.zeros((len(segments), seq_len), dtype=np.uint8)
    modes = np.zeros(len(segments), dtype=np.uint8)
    for i, s in enumerate(segments):
        coords[i] = s.coords
        mask[i] = s.mask
        modes[i] = s.mode.index
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(coords.astype("<f8").tobytes())
        fh.write(mask.tobytes())
        fh.write(modes.tobytes())
    tmp.replace(path)
    return path


def read_dataset(path):
    """Return ``(segments, spec, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise FormatError(f"{path}: not an FTRJ1 dataset")
    (hlen,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9:9 + hlen].decode("utf-8"))
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')}")
    n, seq_len = header["count"], header["seq_len"]
    off = 9 + hlen
    sizes = (8 * n * seq_len * 2, n * seq_len, n)
    if len(raw) != off + sum(sizes):
        raise FormatError(f"{path}: payload size does not match header")
    coords = np.frombuffer(raw[off:off + sizes[0]], dtype="<f8").reshape(n, seq_len, 2)
    off += sizes[0]
    mask = np.frombuffer(raw[off:off + sizes[1]], dtype=np.uint8).reshape(n, seq_len)
    off += sizes[1]
    modes = np.frombuffer(raw[off:off + sizes[2]], dtype=np.uint8)
    segments = [
        Segment(coords[i], mask[i].astype(np.float64), MODES[int(modes[i])],
                header["user_ids"][i], header["seg_ids"][i])
        for i in range(n)
    ]
    norm = header.get("normalization")
    spec = NormalizationSpec.from_dict(norm) if norm else None
    return segments, spec, header.get("meta", {})


def write_segments_csv(path, segments, spec):
    """One row per valid point: ``user_id,seg_idx,step,lat,lon,mode``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "seg_idx", "step", "lat", "lon", "mode"])
        for i, seg in enumerate(segments):
            latlon = spec.denormalize(seg.valid_coords)
            for step, (lat, lon) in enumerate(latlon):
                w.writerow([seg.user_id, i, step, repr(float(lat)), repr(float(lon)), seg.mode.value])
    return path
