import warnings

import numpy as np
import pytest

from fedvae.anonymizers import (KAnonConfig, MixZoneConfig, PerturbConfig, find_zones,
                                kanonymize, mixzone, perturb, read_linkage_csv,
                                write_linkage_csv)
from fedvae.errors import InsufficientNonsensitivePoints, NoZoneFound
from fedvae.traj import BEIJING, TravelMode, haversine_array, make_segment


def line(start, step, n, mode=TravelMode.BUS, user="u", seg="s", seq_len=20):
    coords = np.asarray(start) + np.outer(np.arange(n), step)
    return make_segment(coords, mode, user, seg, seq_len=seq_len)


def crossing_fixture():
    # six users cross cell (5, 5) of the default 0.1 grid during the first window
    out = []
    for u in range(6):
        start = (0.51 + 0.012 * u, 0.52 + 0.005 * u)
        out.append(line(start, (0.001, 0.002 * (u % 3 - 1)), 10, TravelMode.WALKING, f"u{u}", f"s{u}"))
    return out


def endpoints_km(a, b, spec=BEIJING):
    (la, oa), (lb, ob) = spec.denormalize(np.stack([a, b]))
    return float(haversine_array(la, oa, lb, ob))


# -- perturbation ---------------------------------------------------------------

def test_tiny_scale_leaves_points_in_place(small_synth):
    data, _ = small_synth
    out = perturb(data[:20], PerturbConfig(scale_km=1e-12), seed=1)
    for a, b in zip(data, out):
        assert np.allclose(a.coords, b.coords, atol=1e-9)


def test_laplace_mean_l1_displacement_is_two_scales():
    # points in the middle of the box so clamping never applies
    data = [line((0.5, 0.5), (0.0, 0.0), 100, seg=f"s{i}", seq_len=100) for i in range(100)]
    cfg = PerturbConfig(scale_km=0.5)
    out = perturb(data, cfg, seed=3)
    kx, ky = BEIJING.km_per_unit
    d = np.concatenate([np.abs(b.valid_coords - a.valid_coords) * (kx, ky) for a, b in zip(data, out)])
    assert d.shape == (10_000, 2)
    assert np.mean(d.sum(axis=1)) == pytest.approx(2 * cfg.scale_km, rel=0.05)


def test_perturb_keeps_masks_modes_and_ids(small_synth):
    data, _ = small_synth
    out = perturb(data, seed=2)
    assert len(out) == len(data)
    for a, b in zip(data, out):
        assert np.array_equal(a.mask, b.mask)
        assert (a.mode, a.user_id, a.seg_id) == (b.mode, b.user_id, b.seg_id)
        assert np.all((b.coords >= 0) & (b.coords <= 1))


def test_perturb_gaussian_law_and_determinism(small_synth):
    data, _ = small_synth
    cfg = PerturbConfig(scale_km=0.2, law="gaussian")
    a, b = perturb(data[:10], cfg, seed=5), perturb(data[:10], cfg, seed=5)
    assert all(np.array_equal(x.coords, y.coords) for x, y in zip(a, b))
    c = perturb(data[:10], cfg, seed=6)
    assert not all(np.array_equal(x.coords, y.coords) for x, y in zip(a, c))


def test_perturb_config_validation():
    with pytest.raises(ValueError):
        PerturbConfig(scale_km=0.0)
    with pytest.raises(ValueError):
        PerturbConfig(law="cauchy")


# -- mix zones ------------------------------------------------------------------

def test_default_mixzone_parameters():
    cfg = MixZoneConfig()
    assert cfg.k == 6 and cfg.l_limit == 0.1


def test_no_zone_returns_input_with_warning():
    data = crossing_fixture()[:5]              # only five users
    with pytest.warns(NoZoneFound):
        out = mixzone(data, seed=0)
    assert all(np.array_equal(a.coords, b.coords) for a, b in zip(data, out))


def test_six_users_in_one_cell_form_a_zone():
    zones = find_zones(crossing_fixture(), MixZoneConfig())
    assert len(zones) == 1
    key, members = zones[0]
    assert key == (0, 5, 5) and sorted(i for i, _ in members) == list(range(6))


def test_mixzone_permutes_paths_between_users():
    data = crossing_fixture()
    cfg = MixZoneConfig(noise=PerturbConfig(scale_km=1e-7))
    out = mixzone(data, cfg, seed=4)
    # every output path is a lightly perturbed copy of another user's path
    source = []
    for o in out:
        dists = [np.abs(o.valid_coords - d.valid_coords).max() for d in data]
        source.append(int(np.argmin(dists)))
        assert min(dists) < 1e-6
    assert sorted(source) == list(range(6))
    moved = sum(i != j for i, j in enumerate(source))
    assert moved >= 2
    assert [o.user_id for o in out] == [d.user_id for d in data]
    points_in = np.sort(np.concatenate([d.valid_coords for d in data]), axis=0)
    points_out = np.sort(np.concatenate([o.valid_coords for o in out]), axis=0)
    assert np.allclose(points_in, points_out, atol=1e-6)


def test_mixzone_leaves_segments_outside_zones_alone():
    far = line((0.1, 0.1), (0.001, 0.0), 10, user="loner", seg="far")
    data = crossing_fixture() + [far]
    out = mixzone(data, seed=1)
    assert np.array_equal(out[-1].coords, far.coords)
    assert [o.mode for o in out] == [d.mode for d in data]


def test_mixzone_is_deterministic():
    a = mixzone(crossing_fixture(), seed=9)
    b = mixzone(crossing_fixture(), seed=9)
    assert all(np.array_equal(x.coords, y.coords) for x, y in zip(a, b))


# -- k-anonymity ----------------------------------------------------------------

def test_k5_gives_four_decoys_each(small_synth):
    data, _ = small_synth
    released, linkage = kanonymize(data[:12], seed=0)
    assert len(released) == 5 * 12
    assert all(len(v) == 4 for v in linkage.values())
    assert [s.seg_id for s in released[:12]] == [s.seg_id for s in data[:12]]


def test_decoy_endpoints_within_radius(small_synth):
    data, _ = small_synth
    cfg = KAnonConfig(radius_km=0.8)
    released, linkage = kanonymize(data[:10], cfg, seed=2)
    by_id = {s.seg_id: s for s in released}
    for orig in data[:10]:
        for did in linkage[orig.seg_id]:
            d = by_id[did]
            assert endpoints_km(d.coords[0], orig.valid_coords[0]) <= cfg.radius_km + 1e-9
            assert endpoints_km(d.coords[-1], orig.valid_coords[-1]) <= cfg.radius_km + 1e-9


def test_decoys_are_full_valid_segments_with_inherited_mode(small_synth):
    data, _ = small_synth
    released, linkage = kanonymize(data[:8], seed=1)
    by_id = {s.seg_id: s for s in released}
    for orig in data[:8]:
        for did in linkage[orig.seg_id]:
            d = by_id[did]
            assert d.valid_length == len(d.mask) and d.mode == orig.mode
            assert np.all((d.coords >= 0) & (d.coords <= 1))


def test_kanon_needs_other_segments():
    with pytest.raises(InsufficientNonsensitivePoints):
        kanonymize([line((0.5, 0.5), (0.001, 0.0), 10)], seed=0)


def test_kanon_determinism_and_linkage_csv(tmp_path, small_synth):
    data, _ = small_synth
    a, link = kanonymize(data[:6], seed=3)
    b, _ = kanonymize(data[:6], seed=3)
    assert all(np.array_equal(x.coords, y.coords) for x, y in zip(a, b))
    path = write_linkage_csv(tmp_path / "link.csv", link)
    assert path.read_text().splitlines()[0] == "original_id,decoy_id"
    assert read_linkage_csv(path) == link


def test_anonymizers_do_not_modify_inputs(small_synth):
    data, _ = small_synth
    before = [s.coords.copy() for s in data[:6]]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoZoneFound)
        perturb(data[:6], seed=0)
        mixzone(data[:6], seed=0)
    kanonymize(data[:6], seed=0)
    assert all(np.array_equal(b, s.coords) for b, s in zip(before, data))
