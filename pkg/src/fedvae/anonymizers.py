"""Baseline trajectory anonymizers: point perturbation, mix zones and k-anonymity.

All three take a list of segments, a config and a seed, and return new
segments; inputs are never modified.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientNonsensitivePoints, NoZoneFound
from .nn import stream
from .traj.geo import EARTH_RADIUS_KM
from .traj.types import BEIJING, make_segment

NOISE_LAWS = ("laplace", "gaussian")


@dataclass(frozen=True)
class PerturbConfig:
    scale_km: float = 0.5
    law: str = "laplace"

    def __post_init__(self):
        if self.scale_km <= 0:
            raise ValueError("perturbation scale must be > 0")
        if self.law not in NOISE_LAWS:
            raise ValueError(f"noise law must be one of {NOISE_LAWS}")


@dataclass(frozen=True)
class MixZoneConfig:
    k: int = 6
    l_limit: float = 0.1          # in-zone path length cap, unit-square units
    cell_size: float = 0.1        # zone grid cell, unit-square units
    window: int = 25              # zone time window, in steps
    noise: PerturbConfig = field(default_factory=PerturbConfig)

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("mix zones need k >= 2")
        if self.l_limit <= 0 or self.cell_size <= 0 or self.window < 1:
            raise ValueError("l_limit, cell_size and window must be positive")


@dataclass(frozen=True)
class KAnonConfig:
    k: int = 5
    radius_km: float = 1.0        # decoy endpoints lie within this disc
    via_points: int = 3           # borrowed points per decoy
    candidates: int = 16          # nearest pool points considered per via point

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k-anonymity needs k >= 2")
        if self.radius_km <= 0 or self.via_points < 0 or self.candidates < 1:
            raise ValueError("radius, via_points and candidates must be positive")


def _noise(rng, n, cfg, spec):
    kx, ky = spec.km_per_unit
    scale = np.array([cfg.scale_km / kx, cfg.scale_km / ky])
    if cfg.law == "laplace":
        return rng.laplace(0.0, 1.0, size=(n, 2)) * scale
    return rng.normal(0.0, 1.0, size=(n, 2)) * scale


def perturb(dataset, cfg=None, seed=0, spec=BEIJING):
    """Add i.i.d. noise to every valid point, then clamp to the unit square.

    With the Laplace law each axis gets scale ``scale_km``, so the expected
    L1 displacement of a point is ``2 * scale_km``.
    """
    cfg = cfg or PerturbConfig()
    rng = stream(seed, "perturb")
    out = []
    for s in dataset:
        n = s.valid_length
        coords = np.clip(s.valid_coords + _noise(rng, n, cfg, spec), 0.0, 1.0)
        out.append(make_segment(coords, s.mode, s.user_id, s.seg_id, len(s.mask)))
    return out


def _derangement(rng, n):
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def find_zones(dataset, cfg):
    """Zones holding at least ``k`` distinct users, each with its crossing segments.

    A zone is a grid cell during a window of steps. Returns a list of
    ``(zone_key, [(segment index, entry step), ...])`` in key order; every
    segment joins at most one zone and every user at most once per zone.
    """
    visits = defaultdict(dict)          # key -> {seg index: first step}
    for i, s in enumerate(dataset):
        pts = s.valid_coords
        if len(pts) == 0:
            continue
        n_cells = int(math.ceil(1.0 / cfg.cell_size))
        cells = np.minimum((pts / cfg.cell_size).astype(int), n_cells - 1)
        for t, (cx, cy) in enumerate(cells):
            key = (t // cfg.window, int(cx), int(cy))
            visits[key].setdefault(i, t)
    zones, used = [], set()
    for key in sorted(visits):
        members, users = [], set()
        for i, t in sorted(visits[key].items()):
            user = dataset[i].user_id
            if i in used or user in users:
                continue
            members.append((i, t))
            users.add(user)
        if len(users) >= cfg.k:
            zones.append((key, members))
            used.update(i for i, _ in members)
    return zones


def _in_zone_run(coords, entry, key, cfg):
    """Steps from ``entry`` that stay in the zone, capped at ``l_limit`` path length."""
    window, cx, cy = key
    run, length = 0, 0.0
    for t in range(entry, len(coords)):
        cell = np.minimum((coords[t] / cfg.cell_size).astype(int), int(math.ceil(1 / cfg.cell_size)) - 1)
        if t // cfg.window != window or (int(cell[0]), int(cell[1])) != (cx, cy):
            break
        if run:
            length += float(np.hypot(*(coords[t] - coords[t - 1])))
            if length > cfg.l_limit:
                break
        run += 1
    return run


def mixzone(dataset, cfg=None, seed=0, spec=BEIJING):
    """Swap trajectory continuations between users who share a mix zone.

    In every zone the crossing segments are re-joined at their zone entry
    under a random derangement: segment ``i`` keeps its own prefix (and its
    user, id and mode label) and continues along the path of segment
    ``perm[i]``. The spliced in-zone points are perturbed. Output lengths are
    capped at the segment length. Without any zone the input comes back
    unchanged with a :class:`NoZoneFound` warning.
    """
    cfg = cfg or MixZoneConfig()
    dataset = list(dataset)
    zones = find_zones(dataset, cfg)
    out = [make_segment(s.valid_coords, s.mode, s.user_id, s.seg_id, len(s.mask)) for s in dataset]
    if not zones:
        warnings.warn(NoZoneFound(f"no zone reached {cfg.k} distinct users"), stacklevel=2)
        return out
    rng = stream(seed, "mixzone")
    for key, members in zones:
        perm = _derangement(rng, len(members))
        for (i, entry_i), j in zip(members, perm):
            src, entry_j = members[j]
            donor = dataset[src].valid_coords
            seq_len = len(dataset[i].mask)
            head = dataset[i].valid_coords[:entry_i]
            tail = donor[entry_j:].copy()
            run = _in_zone_run(donor, entry_j, key, cfg)
            tail[:run] += _noise(rng, run, cfg.noise, spec)
            coords = np.clip(np.concatenate([head, tail])[:seq_len], 0.0, 1.0)
            s = dataset[i]
            out[i] = make_segment(coords, s.mode, s.user_id, s.seg_id, seq_len)
    return out


def _resample(polyline, n):
    """``n`` points evenly spaced by arc length along ``polyline``."""
    seg = np.hypot(*np.diff(polyline, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0.0:
        return np.repeat(polyline[:1], n, axis=0)
    at = np.linspace(0.0, cum[-1], n)
    return np.column_stack([np.interp(at, cum, polyline[:, 0]), np.interp(at, cum, polyline[:, 1])])


def _disc(rng, centre, radius_km, spec):
    """Uniform point in the ground disc of ``radius_km`` around ``centre``.

    Area-uniform radius and bearing, placed with the great-circle
    destination formula so the ground distance is exactly the drawn radius.
    """
    r = radius_km * math.sqrt(rng.random()) / EARTH_RADIUS_KM
    bearing = rng.uniform(0.0, 2.0 * math.pi)
    lat, lon = np.radians(spec.denormalize(np.asarray(centre)))
    lat2 = math.asin(math.sin(lat) * math.cos(r) + math.cos(lat) * math.sin(r) * math.cos(bearing))
    lon2 = lon + math.atan2(math.sin(bearing) * math.sin(r) * math.cos(lat),
                            math.cos(r) - math.sin(lat) * math.sin(lat2))
    return np.clip(spec.normalize(np.degrees([lat2, lon2])), 0.0, 1.0)


def kanonymize(dataset, cfg=None, seed=0, spec=BEIJING):
    """Hide every segment among ``k - 1`` decoys.

    The first and last valid points of a segment are its sensitive points.
    Each decoy starts and ends at random points within ``radius_km`` of
    them, and passes through nonsensitive points borrowed from other
    segments near the original route; it is then resampled to the full
    segment length. Returns ``(released, linkage)`` where ``released`` lists
    all originals followed by all decoys and ``linkage`` maps each original
    seg_id to its decoy ids.
    """
    cfg = cfg or KAnonConfig()
    dataset = list(dataset)
    ids = [s.seg_id for s in dataset]
    if len(set(ids)) != len(ids):
        raise ValueError("kanonymize needs unique seg_ids")
    kx, ky = spec.km_per_unit
    pool_pts, pool_owner = [], []
    for i, s in enumerate(dataset):
        inner = s.valid_coords[1:-1]
        pool_pts.append(inner)
        pool_owner.append(np.full(len(inner), i))
    pool = np.concatenate(pool_pts) if pool_pts else np.zeros((0, 2))
    owner = np.concatenate(pool_owner) if pool_owner else np.zeros(0, dtype=int)
    need = cfg.via_points
    if need and len(np.unique(owner)) < 2:
        raise InsufficientNonsensitivePoints("decoys need nonsensitive points from other segments")
    tree = cKDTree(pool * (kx, ky)) if len(pool) else None
    rng = stream(seed, "kanon")
    decoys, linkage = [], {}
    for i, s in enumerate(dataset):
        pts = s.valid_coords
        if len(pts) == 0:
            raise InsufficientNonsensitivePoints(f"segment {s.seg_id!r} has no valid points")
        seq_len = len(s.mask)
        anchors = [pts[int(round(f * (len(pts) - 1)))]
                   for f in np.arange(1, need + 1) / (need + 1)]
        linkage[s.seg_id] = []
        for d in range(cfg.k - 1):
            via = []
            for a in anchors:
                q = min(cfg.candidates + len(pts), len(pool))
                _, idx = tree.query(a * (kx, ky), k=q)
                idx = np.atleast_1d(idx)
                idx = idx[owner[idx] != i][:cfg.candidates]
                if idx.size == 0:
                    raise InsufficientNonsensitivePoints(
                        f"no nonsensitive points from other segments near {s.seg_id!r}")
                via.append(pool[rng.choice(idx)])
            start = _disc(rng, pts[0], cfg.radius_km, spec)
            end = _disc(rng, pts[-1], cfg.radius_km, spec)
            coords = np.clip(_resample(np.vstack([start, *via, end]), seq_len), 0.0, 1.0)
            decoy_id = f"{s.seg_id}#decoy{d + 1}"
            decoys.append(make_segment(coords, s.mode, f"decoy-{s.user_id}", decoy_id, seq_len))
            linkage[s.seg_id].append(decoy_id)
    released = [make_segment(s.valid_coords, s.mode, s.user_id, s.seg_id, len(s.mask))
                for s in dataset] + decoys
    return released, linkage


def write_linkage_csv(path, linkage):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["original_id", "decoy_id"])
        for oid, decoys in linkage.items():
            for did in decoys:
                w.writerow([oid, did])
    return path


def read_linkage_csv(path):
    linkage = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            linkage[row["original_id"]].append(row["decoy_id"])
    return dict(linkage)
