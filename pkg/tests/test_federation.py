import dataclasses
import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedvae.errors import (ClientTrainingError, EmptyUpdateSet, NotConverged, SchemaMismatch,
                           TooFewSegments)
from fedvae.federation import (Client, ClientUpdate, FederationConfig, FederationState,
                               RoundReport, fedavg, fitted_epochs, partition_dataset,
                               run_federation, select_clients, write_round_csv)
from fedvae.nn import ParamSet
from fedvae.traj import TravelMode, make_segment
from fedvae.vae import TrajectoryVAE, VaeConfig, init_params, train_local

TINY = VaeConfig(hidden_size=6, latent_dim=3, seq_len=8, mode_embed=2, batch_size=4)


def segs(n, users=None, seq_len=8):
    rng = np.random.default_rng(n)
    out = []
    for i in range(n):
        user = f"u{i % users}" if users else f"u{i}"
        coords = 0.5 + np.cumsum(rng.normal(scale=0.01, size=(seq_len, 2)), axis=0)
        out.append(make_segment(coords, TravelMode.BUS, user, f"s{i}", seq_len=seq_len))
    return out


def update(cid, value, count, shape=(2,)):
    return ClientUpdate(cid, ParamSet({"w": np.full(shape, float(value))}), count, 0.0)


# -- partitioning -----------------------------------------------------------------

def test_uniform_partition_sizes():
    clients = partition_dataset(segs(10), 2, "uniform", seed=1)
    assert sorted(c.sample_count for c in clients) == [5, 5]
    ids = [s.seg_id for c in clients for s in c.dataset]
    assert len(set(ids)) == 10


def test_by_user_partition_one_user_each():
    clients = partition_dataset(segs(12, users=3), 3, "by_user")
    assert [sorted({s.user_id for s in c.dataset}) for c in clients] == [["u0"], ["u1"], ["u2"]]


@given(st.integers(1, 40), st.integers(1, 8), st.sampled_from(["uniform", "by_user"]))
def test_partition_is_disjoint_cover(n, k, strategy):
    data = segs(n, users=min(n, 9))
    users = len({s.user_id for s in data})
    limit = users if strategy == "by_user" else n
    if k > limit:
        with pytest.raises(TooFewSegments):
            partition_dataset(data, k, strategy)
        return
    clients = partition_dataset(data, k, strategy, seed=3)
    ids = [s.seg_id for c in clients for s in c.dataset]
    assert sorted(ids) == sorted(s.seg_id for s in data)
    assert len(ids) == len(set(ids)) and all(c.sample_count > 0 for c in clients)


def test_client_ids_sort_numerically():
    clients = partition_dataset(segs(12), 12, "uniform")
    ids = [c.id for c in clients]
    assert ids == sorted(ids) and ids[0] == "c00"


# -- aggregation ------------------------------------------------------------------

def test_fedavg_weighted_mean_oracle():
    out = fedavg([update("a", 0.0, 1), update("b", 4.0, 3)])
    assert np.array_equal(out["w"].data, [3.0, 3.0])


def test_fedavg_single_client_is_exact():
    p = init_params(TINY, 0)
    out = fedavg([ClientUpdate("x", p, 17, 0.0)])
    assert out.equals(p)


def test_fedavg_identical_clients_fixed_point():
    p = init_params(TINY, 0)
    out = fedavg([ClientUpdate(f"c{i}", p.copy(), i + 1, 0.0) for i in range(4)])
    assert out.equals(p)


def test_fedavg_permutation_invariant_bitwise():
    rng = np.random.default_rng(0)
    ups = [ClientUpdate(f"c{i}", ParamSet({"w": rng.normal(size=(3, 2))}), int(rng.integers(1, 9)), 0.0)
           for i in range(4)]
    ref = fedavg(ups)
    for perm in itertools.permutations(ups):
        assert fedavg(list(perm)).equals(ref)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.integers(1, 1000)), min_size=1, max_size=6))
def test_fedavg_matches_oracle_and_stays_in_envelope(values):
    ups = [update(f"c{i}", v, n) for i, (v, n) in enumerate(values)]
    out = fedavg(ups)["w"].data
    vals = np.array([v for v, _ in values])
    weights = np.array([n for _, n in values], dtype=float)
    oracle = math.fsum(v * w for v, w in zip(vals, weights)) / math.fsum(weights)
    assert np.allclose(out, oracle, rtol=1e-12, atol=1e-9)
    assert np.all(out >= vals.min()) and np.all(out <= vals.max())


def test_fedavg_errors():
    with pytest.raises(EmptyUpdateSet):
        fedavg([])
    with pytest.raises(SchemaMismatch):
        fedavg([update("a", 1.0, 1), update("b", 1.0, 1, shape=(3,))])


# -- selection --------------------------------------------------------------------

def fake_clients(n):
    return [Client(f"c{i:02d}", [None], i) for i in range(n)]


def test_small_federation_selects_all():
    chosen = select_clients(fake_clients(5), FederationConfig(large_scale_threshold=10), 0, 1)
    assert len(chosen) == 5


def test_large_federation_samples_ceil_fraction():
    cfg = FederationConfig(selection_fraction=0.2, large_scale_threshold=20)
    for r in range(5):
        chosen = select_clients(fake_clients(69), cfg, r, 1)
        assert len(chosen) == math.ceil(0.2 * 69) == 14
        assert len({c.id for c in chosen}) == 14


def test_fraction_one_selects_all():
    chosen = select_clients(fake_clients(69), FederationConfig(selection_fraction=1.0), 3, 1)
    assert len(chosen) == 69


def test_availability_and_drops():
    cfg = FederationConfig(drop_probability=0.5)
    chosen = select_clients(fake_clients(10), cfg, 0, 4)
    again = select_clients(fake_clients(10), cfg, 0, 4)
    assert [c.id for c in chosen] == [c.id for c in again] and len(chosen) < 10
    odd_only = select_clients(fake_clients(6), FederationConfig(), 0, 0,
                              available=lambda c, r: int(c.id[1:]) % 2 == 1)
    assert [c.id for c in odd_only] == ["c01", "c03", "c05"]


# -- rounds -----------------------------------------------------------------------

def test_single_client_equals_centralized():
    data = segs(9)
    rounds, epochs = 3, 2
    clients = partition_dataset(data, 1, "uniform", seed=5)
    fed_params, reports = run_federation(clients, FederationConfig(rounds=rounds, local_epochs=epochs,
                                                                   selection_fraction=1.0), TINY, seed=5)
    central, _ = train_local(TrajectoryVAE(TINY, params=init_params(TINY, 5)), clients[0].dataset,
                             rounds * epochs, clients[0].seed, early_stopping=False)
    assert fed_params.max_abs_diff(central) < 1e-12
    assert len(reports) == rounds


def test_zero_rounds_returns_initial_params():
    clients = partition_dataset(segs(4), 2, "uniform")
    params, reports = run_federation(clients, FederationConfig(rounds=0), TINY, seed=2)
    assert params.equals(init_params(TINY, 2)) and reports == []


def test_threads_do_not_change_results():
    data = segs(12, users=4)
    outs = []
    for threads in (1, 3):
        clients = partition_dataset(data, 4, "by_user", seed=1)
        params, reports = run_federation(clients, FederationConfig(rounds=2, threads=threads), TINY, seed=1)
        outs.append((params, [(r.selected, r.client_losses, r.global_loss) for r in reports]))
    assert outs[0][0].equals(outs[1][0]) and outs[0][1] == outs[1][1]


def test_global_loss_is_sample_weighted_over_selected():
    clients = partition_dataset(segs(10, users=3), 3, "by_user", seed=1)
    counts = {c.id: c.sample_count for c in clients}
    _, reports = run_federation(clients, FederationConfig(rounds=1), TINY, seed=1)
    r = reports[0]
    expected = sum(counts[c] * r.client_losses[c] for c in r.selected) / sum(counts[c] for c in r.selected)
    assert r.global_loss == pytest.approx(expected, rel=1e-15)


def test_client_failure_names_the_client():
    clients = partition_dataset(segs(4), 2, "uniform")
    bad = dataclasses.replace(TINY, seq_len=9)       # segments are 8 long
    with pytest.raises(ClientTrainingError, match="c0"):
        run_federation(clients, FederationConfig(rounds=1), bad, seed=0)


def test_resume_matches_uninterrupted(tmp_path):
    data = segs(12, users=3)
    cfg = FederationConfig(rounds=4)
    full, full_reports = run_federation(partition_dataset(data, 3, "by_user", 2), cfg, TINY, seed=2)
    ck = tmp_path / "fed.fvae"
    run_federation(partition_dataset(data, 3, "by_user", 2), dataclasses.replace(cfg, rounds=2), TINY,
                   seed=2, checkpoint=ck)
    state, _ = FederationState.load(ck)
    assert state.completed == 2
    resumed, reports = run_federation(partition_dataset(data, 3, "by_user", 2), cfg, TINY, seed=2,
                                      resume=ck)
    assert resumed.equals(full)
    assert [r.global_loss for r in reports] == [r.global_loss for r in full_reports]


def test_tolerance_stops_early():
    clients = partition_dataset(segs(6), 2, "uniform")
    cfg = FederationConfig(rounds=30, tolerance=10.0, patience=2)
    _, reports = run_federation(clients, cfg, TINY, seed=0)
    assert len(reports) == 3


def test_round_csv(tmp_path):
    rep = RoundReport(1, ["c0"], {"c0": 1.5}, 1.5, 0.1, ["c0", "c1"])
    text = write_round_csv(tmp_path / "r.csv", [rep]).read_text().splitlines()
    assert text == ["round,client_id,loss,selected", "1,c0,1.5,1", "1,c1,,0"]
    assert RoundReport.from_dict(rep.to_dict()) == rep


# -- fitted epochs ----------------------------------------------------------------

def test_fitted_epochs_plateau_at_40():
    losses = [100.0 - 2.0 * r for r in range(1, 41)] + [20.0] * 30
    assert fitted_epochs(losses, 1e-3) == 40


def test_fitted_epochs_constant_and_decreasing():
    assert fitted_epochs([5.0] * 10, 1e-3) == 1
    with pytest.raises(NotConverged) as exc:
        fitted_epochs([100.0 * 0.9 ** r for r in range(30)], 1e-3)
    assert exc.value.rounds == 30


def test_fitted_epochs_ignores_tail_small_against_first_loss():
    # 1000 -> 10 over ten rounds, then a slow 1% per round drift
    losses = [1000.0 - 99.0 * r for r in range(11)] + [10.0 * 0.99 ** r for r in range(1, 40)]
    assert fitted_epochs(losses, 1e-3) == 11


def test_fitted_epochs_patience_requires_evidence():
    losses = [10.0, 5.0, 5.0]
    assert fitted_epochs(losses, 1e-3, patience=1) == 2
    with pytest.raises(NotConverged):
        fitted_epochs(losses, 1e-3, patience=2)
