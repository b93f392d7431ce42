import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedvae.errors import MissingLinkage, NoOverlap
from fedvae.evaluation import (FEATURE_NAMES, MethodResult, SimilarityConfig, TmiReport,
                               confusion_matrix, dataset_similarity, feature_matrix,
                               kl_histogram, knn_predict, mean_distance_km, render_table,
                               similarity, tmi_knn, tmi_mlp, trip_lengths, utility_pipeline,
                               write_grid_csv, write_similarity_csv)
from fedvae.traj import BEIJING, MODES, TravelMode, make_segment, synth_dataset

KM_PER_DEG = 6371.0 * math.pi / 180.0


def along_lat(n, start=(0.4, 0.4), step=0.0005, mode=TravelMode.WALKING, seg="s", user="u"):
    coords = np.asarray(start) + np.outer(np.arange(n), (step, 0.0))
    return make_segment(coords, mode, user, seg, seq_len=20)


def shifted(seg, km, seg_id="r"):
    # move every point north by ``km``; along a meridian haversine is exact
    du = km / (BEIJING.lat_span * KM_PER_DEG)
    return make_segment(seg.valid_coords + (du, 0.0), seg.mode, "gen", seg_id, seq_len=len(seg.mask))


# -- similarity -----------------------------------------------------------------

def test_walking_pair_quarter_km_apart():
    a = along_lat(10)
    assert mean_distance_km(a, shifted(a, 0.25)) == pytest.approx(0.25, rel=1e-9)
    assert similarity(a, shifted(a, 0.25)) == pytest.approx(0.2, rel=1e-9)


def test_subway_pair_three_km_apart():
    a = along_lat(10, mode=TravelMode.SUBWAY)
    assert similarity(a, shifted(a, 3.0)) == pytest.approx(1.0, rel=1e-9)


def test_identical_pair_saturates_at_floor():
    a = along_lat(10)
    assert similarity(a, a) == pytest.approx(50.0)
    rep = dataset_similarity([a, a], [a, a])
    assert rep.saturated == 2 and np.all(rep.values == pytest.approx(50.0))


def test_doubling_distance_halves_similarity():
    originals = [along_lat(10, start=(0.3 + 0.05 * i, 0.4), mode=m, seg=f"o{i}")
                 for i, m in enumerate(MODES)]
    near = [shifted(o, 0.4 + 0.1 * i, f"n{i}") for i, o in enumerate(originals)]
    far = [shifted(o, 2 * (0.4 + 0.1 * i), f"f{i}") for i, o in enumerate(originals)]
    a = dataset_similarity(originals, near).mean
    b = dataset_similarity(originals, far).mean
    assert b == pytest.approx(a / 2, rel=1e-9)


@given(st.floats(0.01, 50.0), st.floats(1.01, 10.0))
def test_similarity_scales_inversely_with_distance(km, c):
    a = along_lat(8, mode=TravelMode.CAR)
    s1 = similarity(a, shifted(a, km))
    s2 = similarity(a, shifted(a, c * km))
    assert s2 < s1 and s1 / s2 == pytest.approx(c, rel=1e-6)


def test_shorter_prefix_is_compared():
    a = along_lat(10)
    b = shifted(along_lat(4), 0.5)
    assert mean_distance_km(a, b) == pytest.approx(0.5, rel=1e-9)
    with pytest.raises(NoOverlap):
        mean_distance_km(a, make_segment(np.zeros((0, 2)), TravelMode.BUS, seq_len=20))


def test_linkage_pairing_averages_decoys():
    o = along_lat(10, seg="o")
    decoys = [shifted(o, km, f"d{i}") for i, km in enumerate((0.25, 0.5, 1.0, 2.0))]
    rep = dataset_similarity([o], [o] + decoys, pairing="linkage",
                             linkage={"o": [d.seg_id for d in decoys]})
    assert rep.values[0] == pytest.approx(np.mean([0.2, 0.1, 0.05, 0.025]), rel=1e-9)
    with pytest.raises(MissingLinkage):
        dataset_similarity([o], decoys, pairing="linkage")
    with pytest.raises(MissingLinkage):
        dataset_similarity([o], decoys, pairing="linkage", linkage={"o": ["nope"]})


def test_nearest_pairing_picks_closest_same_mode():
    walk = along_lat(10, start=(0.4, 0.4), seg="walk")
    bus = along_lat(10, start=(0.4, 0.4), mode=TravelMode.BUS, seg="bus")
    far_walk = along_lat(10, start=(0.6, 0.6), seg="far")
    released = [shifted(walk, 0.5, "g0")]
    rep = dataset_similarity([bus, far_walk, walk], released, pairing="nearest")
    assert rep.pairs == [("walk", ["g0"])]
    assert rep.values[0] == pytest.approx(0.05 / 0.5, rel=1e-6)


def test_similarity_config_validation():
    with pytest.raises(ValueError):
        SimilarityConfig(floor_km=0.0)
    assert SimilarityConfig().beta(TravelMode.SUBWAY) == 3.0


# -- trip length KL -------------------------------------------------------------

def test_kl_self_is_zero():
    a = np.random.default_rng(0).gamma(2.0, 3.0, size=200)
    assert kl_histogram(a, a) == pytest.approx(0.0, abs=1e-12)


def test_kl_hand_case_equal_bin_masses():
    assert kl_histogram([1, 1, 3, 3], [1, 3], bins=2) == pytest.approx(0.0, abs=1e-12)


def test_kl_disjoint_supports_large_but_finite():
    v = kl_histogram([0.0, 0.1, 0.2], [10.0, 10.1, 10.2])
    assert math.isfinite(v) and v > 10


def test_kl_is_asymmetric():
    a, b = [0, 0, 0, 1], [0, 1, 1, 1]
    p, q = np.array([0.75, 0.25]), np.array([0.25, 0.75])
    assert kl_histogram(a, b, bins=2) == pytest.approx(float(np.sum(p * np.log(p / q))), rel=1e-6)
    assert kl_histogram([0, 0, 1], [0, 1, 1, 1], bins=2) != kl_histogram([0, 1, 1, 1], [0, 0, 1], bins=2)


def test_kl_degenerate_range_is_zero():
    assert kl_histogram([2.0, 2.0], [2.0]) == 0.0
    with pytest.raises(ValueError):
        kl_histogram([], [1.0])


@given(st.lists(st.floats(0, 100), min_size=1, max_size=30),
       st.lists(st.floats(0, 100), min_size=1, max_size=30))
def test_kl_nonnegative(a, b):
    assert kl_histogram(a, b) >= 0.0


def test_trip_lengths_match_step_sums():
    a = along_lat(10)
    expected = 9 * 0.0005 * BEIJING.lat_span * KM_PER_DEG
    assert trip_lengths([a])[0] == pytest.approx(expected, rel=1e-9)


# -- classifiers ----------------------------------------------------------------

def test_knn_duplicate_point_gets_its_label():
    x = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    y = np.array([0, 1, 2])
    assert list(knn_predict(x, y, x, 1)) == [0, 1, 2]


def test_knn_large_k_gives_global_majority():
    x = np.arange(7, dtype=float)[:, None]
    y = np.array([0, 0, 0, 1, 1, 2, 3])
    assert set(knn_predict(x, y, np.array([[6.0], [100.0]]), 50)) == {0}


def test_knn_tie_broken_by_nearest_neighbour():
    x = np.array([[0.0], [1.0], [10.0], [11.0]])
    y = np.array([0, 0, 1, 1])
    assert list(knn_predict(x, y, np.array([[9.0]]), 4)) == [1]


def test_features_of_a_straight_walk():
    f = feature_matrix([along_lat(10)])[0]
    step = 0.0005 * BEIJING.lat_span * KM_PER_DEG
    assert f[0] == pytest.approx(step, rel=1e-9) and f[1] == pytest.approx(0.0, abs=1e-15)
    assert f[3] == pytest.approx(9 * step, rel=1e-9) and f[4] == 0.0
    assert len(FEATURE_NAMES) == 5


def test_mlp_memorizes_one_sample_per_class():
    train = [along_lat(10, step=0.0001 * (i + 1), mode=m, seg=f"m{i}") for i, m in enumerate(MODES)]
    rep = tmi_mlp(train, train, epochs=300)
    assert rep.accuracy_mean == 1.0 and len(rep.accuracies) == 5 and rep.accuracy_std == 0.0


def test_real_separable_set_is_learnable():
    train, _ = synth_dataset(10, 30, 7)
    test, _ = synth_dataset(10, 10, 8)
    assert tmi_knn(train, test).accuracy_mean >= 0.85
    assert tmi_mlp(train, test, epochs=100).accuracy_mean >= 0.80


def test_confusion_trace_equals_accuracy():
    train, _ = synth_dataset(5, 10, 7)
    test, _ = synth_dataset(5, 6, 9)
    rep = tmi_knn(train, test, k_neighbors=3)
    cm = rep.confusion
    assert cm.sum() == len(test)
    assert np.trace(cm) / cm.sum() == rep.accuracy_mean
    counts = np.bincount([s.mode.index for s in test], minlength=len(MODES))
    assert np.array_equal(cm.sum(axis=1), counts)


def test_utility_pipeline_contracts():
    train, _ = synth_dataset(5, 10, 7)
    test, _ = synth_dataset(5, 6, 9)
    assert utility_pipeline(train, test, classifiers=()) == []
    with pytest.raises(ValueError):
        utility_pipeline(train, train[:3], classifiers=("knn",))
    (knn,) = utility_pipeline(train, test, classifiers=("knn",))
    assert knn.accuracy_mean == tmi_knn(train, test).accuracy_mean


def test_confusion_matrix_counts():
    cm = confusion_matrix(np.array([0, 0, 1]), np.array([0, 1, 1]), n_classes=2)
    assert cm.tolist() == [[1, 1], [0, 1]]


# -- writers ----------------------------------------------------------------------

def test_grid_table_and_similarity_csv(tmp_path):
    rep = TmiReport("knn", [0.5, 0.7], [np.eye(2, dtype=int), np.eye(2, dtype=int)])
    results = [MethodResult("real", 50.0, 0.0, {"knn": rep}), MethodResult("perturb", 0.8, 0.1, {})]
    lines = write_grid_csv(tmp_path / "g.csv", results).read_text().splitlines()
    assert lines[0] == "method,similarity,kl_trip_length,knn_accuracy,knn_std"
    assert lines[2] == "perturb,0.8,0.1,,"
    table = render_table(results)
    assert "perturb" in table and "-" in table.splitlines()[-1]
    a = along_lat(5, seg="o")
    sim = dataset_similarity([a], [shifted(a, 0.25, "r")])
    text = write_similarity_csv(tmp_path / "s.csv", sim).read_text().splitlines()
    assert text[0] == "original_id,released_ids,similarity" and text[1].startswith("o,r,")
