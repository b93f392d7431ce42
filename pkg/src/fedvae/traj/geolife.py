"""Reading and writing the Geolife ``.plt`` and ``labels.txt`` formats.

A ``.plt`` file has six header lines followed by records::

    lat,lon,0,altitude_ft,days_since_1899-12-30,YYYY-MM-DD,HH:MM:SS

``labels.txt`` has one header line followed by tab-separated
``YYYY/MM/DD HH:MM:SS<TAB>YYYY/MM/DD HH:MM:SS<TAB>mode`` lines. Times are UTC.
"""

import bisect
import calendar
import io
import time
import warnings
from pathlib import Path

from ..errors import InvertedInterval, MalformedRecord, NonMonotonicTime, OutOfRangeCoordinate
from .types import GpsPoint, Trajectory, TravelMode

PLT_HEADER = (
    "Geolife trajectory\n"
    "WGS 84\n"
    "Altitude is in Feet\n"
    "Reserved 3\n"
    "0,2,255,My Track,0,0,2,8421376\n"
    "0\n"
)
HEADER_LINES = 6
_DAYS_OFFSET = 25569.0  # 1970-01-01 in days since 1899-12-30

# Geolife modes outside the five supported ones; anything not listed is dropped.
MODE_ALIASES = {
    "walk": TravelMode.WALKING,
    "walking": TravelMode.WALKING,
    "bike": TravelMode.BIKING,
    "biking": TravelMode.BIKING,
    "bus": TravelMode.BUS,
    "car": TravelMode.CAR,
    "taxi": TravelMode.CAR,
    "subway": TravelMode.SUBWAY,
    "train": TravelMode.SUBWAY,
}


def _lines(text):
    if hasattr(text, "read"):
        text = text.read()
    return io.StringIO(text).read().splitlines()


def _parse_time(date_s, time_s, fmt, lineno):
    try:
        return calendar.timegm(time.strptime(f"{date_s} {time_s}", fmt))
    except ValueError as exc:
        raise MalformedRecord(f"bad timestamp {date_s!r} {time_s!r}: {exc}", lineno) from None


def _parse_label_time(field, lineno):
    parts = field.strip().split(" ", 1)
    if len(parts) != 2:
        raise MalformedRecord("timestamps must be 'YYYY/MM/DD HH:MM:SS'", lineno)
    return _parse_time(parts[0], parts[1], "%Y/%m/%d %H:%M:%S", lineno)


def parse_geolife_plt(text, user_id="", mode=None):
    """Parse one ``.plt`` file into a Trajectory.

    Records out of time order are kept (sorted stably by time) and reported
    through a :class:`NonMonotonicTime` warning.
    """
    lines = _lines(text)
    points = []
    for lineno, line in enumerate(lines[HEADER_LINES:], start=HEADER_LINES + 1):
        if not line.strip():
            continue
        fields = line.strip().split(",")
        if len(fields) != 7:
            raise MalformedRecord(f"expected 7 fields, got {len(fields)}", lineno)
        try:
            lat, lon = float(fields[0]), float(fields[1])
        except ValueError:
            raise MalformedRecord(f"non-numeric coordinate in {line!r}", lineno) from None
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise OutOfRangeCoordinate(f"line {lineno}: coordinate ({lat}, {lon}) out of range")
        t = _parse_time(fields[5], fields[6], "%Y-%m-%d %H:%M:%S", lineno)
        points.append(GpsPoint(lat, lon, t))
    if not points:
        raise MalformedRecord("no records after the header", len(lines))
    backwards = sum(1 for a, b in zip(points, points[1:]) if b.t < a.t)
    if backwards:
        warnings.warn(f"{backwards} record(s) go back in time; sorted by timestamp",
                      NonMonotonicTime)
        points.sort(key=lambda p: p.t)
    return Trajectory(points, user_id=user_id, mode=mode)


def serialize_geolife_plt(traj):
    out = [PLT_HEADER]
    for p in traj.points:
        days = p.t / 86400.0 + _DAYS_OFFSET
        stamp = time.gmtime(p.t)
        out.append(f"{p.lat!r},{p.lon!r},0,0,{days!r},"
                   f"{time.strftime('%Y-%m-%d', stamp)},{time.strftime('%H:%M:%S', stamp)}\n")
    return "".join(out)


def parse_geolife_labels(text):
    """Parse ``labels.txt`` into ``(start_t, end_t, TravelMode)`` tuples."""
    intervals = []
    lines = _lines(text)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 3:
            raise MalformedRecord(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
        start = _parse_label_time(fields[0], lineno)
        end = _parse_label_time(fields[1], lineno)
        if end < start:
            raise InvertedInterval(f"line {lineno}: end {fields[1]!r} precedes start {fields[0]!r}")
        mode = MODE_ALIASES.get(fields[2].strip().lower())
        if mode is not None:
            intervals.append((start, end, mode))
    return intervals


def split_by_labels(traj, intervals):
    """Cut ``traj`` into labeled pieces at interval boundaries.

    Each point takes the label of the interval containing its timestamp;
    unlabeled points are dropped and every maximal run of points sharing one
    interval becomes a Trajectory carrying that interval's mode.
    """
    intervals = sorted(intervals)
    starts = [iv[0] for iv in intervals]
    pieces, current, current_iv = [], [], None
    for p in traj.points:
        k = bisect.bisect_right(starts, p.t) - 1
        iv = k if k >= 0 and intervals[k][0] <= p.t <= intervals[k][1] else None
        if iv != current_iv and current:
            if current_iv is not None:
                pieces.append(Trajectory(current, traj.user_id, intervals[current_iv][2]))
            current = []
        current_iv = iv
        current.append(p)
    if current and current_iv is not None:
        pieces.append(Trajectory(current, traj.user_id, intervals[current_iv][2]))
    return pieces


def load_geolife(root):
    """Labeled trajectories from a Geolife ``Data`` directory.

    ``root`` may be the ``Data`` directory or its parent. Users without a
    ``labels.txt`` are skipped. Returns ``(trajectories, trajectory_ids)``.
    """
    root = Path(root)
    if (root / "Data").is_dir():
        root = root / "Data"
    trajectories, ids = [], []
    for user_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        labels_path = user_dir / "labels.txt"
        if not labels_path.exists():
            continue
        intervals = parse_geolife_labels(labels_path.read_text())
        for plt in sorted((user_dir / "Trajectory").glob("*.plt")):
            try:
                traj = parse_geolife_plt(plt.read_text(), user_id=user_dir.name)
            except MalformedRecord as exc:
                raise MalformedRecord(f"{plt}: {exc}") from None
            for k, piece in enumerate(split_by_labels(traj, intervals)):
                trajectories.append(piece)
                ids.append(f"{user_dir.name}/{plt.stem}/{k}")
    return trajectories, ids
