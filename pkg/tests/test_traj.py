import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FIXTURES
from fedvae.errors import (EmptyTrajectory, FormatError, InvertedInterval, MalformedRecord,
                           MissingLabel, NonMonotonicTime, OutOfRangeCoordinate)
from fedvae.traj import (BEIJING, MODES, GpsPoint, NormalizationSpec, Trajectory, TravelMode,
                         denormalize, haversine_km, load_geolife, make_segment, parse_geolife_labels,
                         parse_geolife_plt, read_dataset, segment_trajectory, serialize_geolife_plt,
                         step_lengths_km, synth_dataset, write_dataset, write_segments_csv)
from fedvae.traj.geo import pairwise_km

PLT = FIXTURES / "geolife" / "Data" / "010" / "Trajectory" / "20081023025304.plt"
LABELS = FIXTURES / "geolife" / "Data" / "010" / "labels.txt"
HEADER = "Geolife trajectory\nWGS 84\nAltitude is in Feet\nReserved 3\n0,2,255,My Track,0,0,2,8421376\n0\n"

# spherical law of cosines, an independent formula for the same great-circle distance
ONE_DEGREE_EQUATOR_KM = 111.19492664455873
BEIJING_ONE_DEGREE_LON_KM = 85.29919853362217


def line(lat, lon, date="2008-10-23", clock="02:53:04"):
    return f"{lat},{lon},0,492,39744.1201851852,{date},{clock}\n"


lats = st.floats(-89.9, 89.9)
lons = st.floats(-179.9, 179.9)
points = st.builds(GpsPoint, lats, lons)


# -- geometry ---------------------------------------------------------------------

def test_haversine_reference_values():
    a = GpsPoint(0.0, 0.0)
    assert haversine_km(a, a) == 0.0
    assert haversine_km(a, GpsPoint(1.0, 0.0)) == pytest.approx(ONE_DEGREE_EQUATOR_KM, abs=1e-9)
    bj = haversine_km(GpsPoint(39.9042, 116.4074), GpsPoint(39.9042, 117.4074))
    assert bj == pytest.approx(BEIJING_ONE_DEGREE_LON_KM, abs=1e-8)
    assert bj == pytest.approx(85.4, abs=0.15)


@given(points, points)
def test_haversine_symmetric_nonnegative(a, b):
    d = haversine_km(a, b)
    assert d == haversine_km(b, a) and d >= 0
    if (a.lat, a.lon) == (b.lat, b.lon):
        assert d == 0


@given(points, points, points)
def test_haversine_triangle_inequality(a, b, c):
    assert haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9


def test_gps_point_bounds():
    with pytest.raises(OutOfRangeCoordinate):
        GpsPoint(91.0, 0.0)
    with pytest.raises(OutOfRangeCoordinate):
        GpsPoint(0.0, 180.5)
    with pytest.raises(OutOfRangeCoordinate):
        GpsPoint(float("nan"), 0.0)


def test_normalization_spec_validation():
    with pytest.raises(ValueError):
        NormalizationSpec(1.0, 1.0, 0.0, 1.0)


@given(st.floats(0, 1), st.floats(0, 1))
def test_normalize_denormalize_roundtrip(x, y):
    latlon = BEIJING.denormalize(np.array([x, y]))
    assert np.allclose(BEIJING.normalize(latlon), [x, y], atol=1e-12)
    back = BEIJING.denormalize(BEIJING.normalize(latlon))
    assert np.allclose(back, latlon, atol=1e-9, rtol=0)


def test_unit_centre_is_box_centre():
    p = denormalize(np.array([[0.5, 0.5]]), BEIJING)[0]
    assert p.lat == pytest.approx(39.9042, abs=1e-9)
    assert p.lon == pytest.approx(116.4074, abs=1e-9)


def test_threshold_mse_maps_below_four_km():
    # a unit-square mean squared point error of 0.000625 is an RMS offset of 0.025;
    # in every direction and anywhere in the box that stays under 4 km
    rng = np.random.default_rng(5)
    base = rng.uniform(0.05, 0.95, size=(2000, 2))
    angle = rng.uniform(0, 2 * np.pi, size=2000)
    moved = base + 0.025 * np.column_stack([np.cos(angle), np.sin(angle)])
    d = pairwise_km(BEIJING.denormalize(base), BEIJING.denormalize(moved))
    assert np.mean((moved - base) ** 2 * 2) == pytest.approx(0.000625)
    assert d.max() < 4.0


# -- Geolife formats --------------------------------------------------------------

def test_parse_minimal_plt():
    traj = parse_geolife_plt(HEADER + line(39.9, 116.3) + line(39.91, 116.31, clock="02:53:09"))
    assert len(traj) == 2
    assert traj.points[1].t - traj.points[0].t == 5
    assert traj.points[0].t == 1224730384  # 2008-10-23T02:53:04Z


def test_parse_plt_errors():
    with pytest.raises(OutOfRangeCoordinate):
        parse_geolife_plt(HEADER + line(91, 116.3))
    with pytest.raises(MalformedRecord) as exc:
        parse_geolife_plt(HEADER + line(39.9, 116.3) + "39.9,116.3,0\n")
    assert exc.value.line == 8
    with pytest.raises(MalformedRecord):
        parse_geolife_plt(HEADER + line(39.9, 116.3, clock="25:00:00"))


def test_parse_plt_backwards_time_warns_and_sorts():
    text = HEADER + line(39.9, 116.3, clock="02:53:09") + line(39.8, 116.3)
    with pytest.warns(NonMonotonicTime):
        traj = parse_geolife_plt(text)
    assert [p.lat for p in traj.points] == [39.8, 39.9]


def test_fixture_plt_roundtrip():
    text = PLT.read_text()
    first = parse_geolife_plt(text)
    assert len(first) == 120
    again = parse_geolife_plt(serialize_geolife_plt(first))
    assert again.points == first.points


def test_labels_parsing_and_aliases():
    intervals = parse_geolife_labels(LABELS.read_text())
    assert [m for _, _, m in intervals] == [TravelMode.WALKING, TravelMode.CAR]  # taxi -> car, airplane dropped
    one = parse_geolife_labels("Start Time\tEnd Time\tTransportation Mode\n"
                               "2008/10/23 02:53:04\t2008/10/23 02:56:19\twalk\n")
    assert one == [(1224730384, 1224730579, TravelMode.WALKING)]
    assert parse_geolife_labels("h\n2008/10/23 02:53:04\t2008/10/23 02:56:19\ttrain\n")[0][2] == TravelMode.SUBWAY


def test_labels_errors():
    with pytest.raises(InvertedInterval):
        parse_geolife_labels("h\n2008/10/23 02:56:19\t2008/10/23 02:53:04\twalk\n")
    with pytest.raises(MalformedRecord):
        parse_geolife_labels("h\n2008/10/23 02:56:19 walk\n")


def test_load_geolife_fixture_modes():
    trajectories, ids = load_geolife(FIXTURES / "geolife")
    # user 011 has no labels.txt and is skipped; the airplane interval and tail are unlabeled
    assert [(t.user_id, t.mode, len(t)) for t in trajectories] == [
        ("010", TravelMode.WALKING, 40), ("010", TravelMode.CAR, 50)]
    assert ids == ["010/20081023025304/0", "010/20081023025304/1"]
    segs = [s for t, i in zip(trajectories, ids) for s in segment_trajectory(t, BEIJING, traj_id=i)]
    assert [(s.mode, s.valid_length) for s in segs] == [(TravelMode.WALKING, 40), (TravelMode.CAR, 50)]


# -- segmentation -----------------------------------------------------------------

def make_traj(m, mode=TravelMode.BUS):
    return Trajectory([GpsPoint(39.9 + 1e-4 * i, 116.4, 30 * i) for i in range(m)], "u", mode)


@pytest.mark.parametrize("m,expected", [(230, [100, 100, 30]), (100, [100]), (1, [1])])
def test_segment_lengths(m, expected):
    segs = segment_trajectory(make_traj(m), BEIJING)
    assert [s.valid_length for s in segs] == expected
    last = segs[-1]
    assert np.all(last.coords[last.valid_length:] == 0)
    assert np.all(last.mask[:last.valid_length] == 1)


def test_segment_min_valid_drops_short_tail():
    segs = segment_trajectory(make_traj(203), BEIJING, min_valid=5)
    assert [s.valid_length for s in segs] == [100, 100]


def test_segment_errors():
    with pytest.raises(MissingLabel):
        segment_trajectory(Trajectory([GpsPoint(39.9, 116.4)], "u"), BEIJING)
    with pytest.raises(EmptyTrajectory):
        segment_trajectory(None, BEIJING)
    with pytest.raises(EmptyTrajectory):
        Trajectory([], "u")


@given(st.integers(1, 450))
def test_segment_masks_are_prefixes_and_count_points(m):
    segs = segment_trajectory(make_traj(m), BEIJING)
    assert len(segs) == math.ceil(m / 100)
    assert sum(s.valid_length for s in segs) == m
    for s in segs:
        assert np.all(np.diff(s.mask) <= 0)
        assert s.mode_onehot.sum() == 1


def test_out_of_box_points_are_clamped_with_warning():
    traj = Trajectory([GpsPoint(45.0, 116.4), GpsPoint(39.9, 116.4, 30)], "u", TravelMode.CAR)
    with pytest.warns(UserWarning, match="clamped"):
        segs = segment_trajectory(traj, BEIJING)
    assert segs[0].coords[0, 0] == 1.0


def test_segment_invariants_enforced():
    with pytest.raises(ValueError):
        make_segment(np.zeros((101, 2)), TravelMode.BUS)
    s = make_segment([[0.1, 0.2]], TravelMode.BUS)
    with pytest.raises(ValueError):
        s.replace(mask=np.r_[0.0, 1.0, np.zeros(98)])


# -- synthesis --------------------------------------------------------------------

def test_synth_is_deterministic():
    a, _ = synth_dataset(5, 10, 7)
    b, _ = synth_dataset(5, 10, 7)
    c, _ = synth_dataset(5, 10, 8)
    assert len(a) == 50
    assert all(x.same_content(y) and x.seg_id == y.seg_id for x, y in zip(a, b))
    assert not all(np.array_equal(x.coords, y.coords) for x, y in zip(a, c))


def test_synth_speed_bands_separate_walking_and_car():
    segments, spec = synth_dataset(10, 20, 3)
    steps = {m: [] for m in MODES}
    for s in segments:
        steps[s.mode].append(step_lengths_km(spec.denormalize(s.valid_coords)).mean())
    # walking ~5 km/h and car ~60 km/h at a 30 s cadence: 0.042 vs 0.5 km per step
    assert np.mean(steps[TravelMode.WALKING]) == pytest.approx(5 * 30 / 3600, rel=0.2)
    assert np.mean(steps[TravelMode.CAR]) == pytest.approx(60 * 30 / 3600, rel=0.2)
    assert max(steps[TravelMode.WALKING]) < min(steps[TravelMode.CAR])


def test_synth_for_69_users():
    segments, _ = synth_dataset(69, 1, 0)
    assert len({s.user_id for s in segments}) == 69


# -- dataset files ----------------------------------------------------------------

def test_ftrj_roundtrip(tmp_path, small_synth):
    segments, spec = small_synth
    path = write_dataset(tmp_path / "d.ftrj", segments, spec, {"k": 1})
    back, spec2, meta = read_dataset(path)
    assert spec2 == spec and meta == {"k": 1}
    assert all(a.same_content(b) and a.seg_id == b.seg_id for a, b in zip(segments, back))


def test_ftrj_rejects_corruption(tmp_path, small_synth):
    segments, spec = small_synth
    path = write_dataset(tmp_path / "d.ftrj", segments[:3], spec)
    raw = path.read_bytes()
    (tmp_path / "bad.ftrj").write_bytes(b"XXXX1" + raw[5:])
    with pytest.raises(FormatError):
        read_dataset(tmp_path / "bad.ftrj")
    (tmp_path / "short.ftrj").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_dataset(tmp_path / "short.ftrj")


def test_segments_csv(tmp_path, small_synth):
    segments, spec = small_synth
    path = write_segments_csv(tmp_path / "d.csv", segments[:2], spec)
    rows = path.read_text().splitlines()
    assert rows[0] == "user_id,seg_idx,step,lat,lon,mode"
    assert len(rows) == 1 + segments[0].valid_length + segments[1].valid_length


def test_denormalize_timestamps_use_cadence():
    pts = denormalize(np.full((100, 2), 0.5), BEIJING, mask=np.r_[np.ones(3), np.zeros(97)], t0=100)
    assert [p.t for p in pts] == [100, 130, 160]


def test_clamped_warning_is_not_raised_for_inside_points():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        segment_trajectory(make_traj(10), BEIJING)
