"""``FVAE1`` checkpoint container.

Layout (all integers little-endian)::

    b"FVAE1"                      5 bytes magic
    uint32 header_length
    header                        UTF-8 JSON, header_length bytes
    arrays                        float64 '<f8', concatenated in header order

The header holds ``{"format": "FVAE1", "version": 1, "schema": [{"name", "shape"}],
"normalization": {...} | null, "seed": int | null, "meta": {...}}``.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .params import ParamSet

MAGIC = b"FVAE1"
VERSION = 1

__all__ = ["write_arrays", "read_arrays", "save_params", "load_params", "MAGIC"]


def write_arrays(path, arrays, normalization=None, seed=None, meta=None):
    schema = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()]
    header = {
        "format": "FVAE1",
        "version": VERSION,
        "schema": schema,
        "normalization": normalization,
        "seed": seed,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)
    return path


def read_arrays(path):
    """Return ``(arrays, header)`` from an ``FVAE1`` file."""
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise FormatError(f"{path}: not an FVAE1 checkpoint")
    (hlen,) = struct.unpack("<I", raw[5:9])
    try:
        header = json.loads(raw[9:9 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')}")
    offset = 9 + hlen
    arrays = OrderedDict()
    for entry in header["schema"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        end = offset + 8 * n
        if end > len(raw):
            raise FormatError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, header


def save_params(path, params, normalization=None, seed=None, meta=None):
    return write_arrays(path, params.arrays(), normalization=normalization, seed=seed, meta=meta)


def load_params(path):
    arrays, header = read_arrays(path)
    return ParamSet.from_arrays(arrays), header
