"""Pipeline stages behind the command line: prepare, train, generate,
anonymize, evaluate and scalability.

Every stage reads its inputs from and writes its outputs under ``cfg.out``::

    data/{train,val,test}.ftrj (+ .csv)
    model/global.fvae, model/federation.fvae, model/rounds.csv
    released/<method>.ftrj (+ .csv, kanon also writes a linkage CSV)
    eval/table.txt, eval/grid.csv, eval/kl.csv, eval/similarity-<method>.csv
    plots/*.png
    scalability/fitted_epochs.csv
    manifest-<stage>.json, config.effective.yaml
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .anonymizers import kanonymize, mixzone, perturb, read_linkage_csv, write_linkage_csv
from .config import dump_config, to_dict
from .errors import EmptyDataset, MissingInput, NotConverged, UnknownMethod
from .evaluation import (MethodResult, dataset_similarity, kl_histogram, render_table,
                         tmi_knn, tmi_mlp, trip_lengths, write_grid_csv, write_similarity_csv)
from .federation import (FederationState, partition_dataset, run_federation,
                         fitted_epochs, thread_count, write_round_csv)
from .nn import derive_seed, load_params, save_params, stream
from .plotting import plot_kl_bars, plot_loss_curve, plot_scalability, plot_trip_lengths
from .traj import (BEIJING, load_geolife, read_dataset, segment_trajectory, synth_trajectories,
                   write_dataset, write_segments_csv)
from .vae import TrajectoryVAE, generate_like

METHODS = ("fedvae", "kanon", "perturb", "mixzone")
SPLITS = ("train", "val", "test")
# How each release is matched back to the originals when scoring similarity.
PAIRING = {"fedvae": "nearest", "kanon": "linkage", "perturb": "index", "mixzone": "index"}


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str
    seed: int
    threads: int
    outputs: dict = field(default_factory=dict)     # label -> path
    timings: dict = field(default_factory=dict)     # step -> seconds
    summary: dict = field(default_factory=dict)

    def write(self, out):
        path = Path(out) / f"manifest-{self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        return path


class _Stage:
    """Collects outputs and timings for one command and writes its manifest."""

    def __init__(self, command, cfg):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.manifest = RunManifest(command, to_dict(cfg), __version__, cfg.seed,
                                    thread_count(cfg.federation))
        self._t0 = time.perf_counter()

    def path(self, *parts):
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, label, path):
        self.manifest.outputs[label] = str(path)
        return path

    def timed(self, label, fn, *args, **kwargs):
        t = time.perf_counter()
        result = fn(*args, **kwargs)
        self.manifest.timings[label] = round(time.perf_counter() - t, 6)
        return result

    def finish(self):
        self.manifest.timings["total"] = round(time.perf_counter() - self._t0, 6)
        self.record("config", dump_config(self.cfg, self.out / "config.effective.yaml"))
        missing = [p for p in self.manifest.outputs.values() if not Path(p).exists()]
        if missing:
            raise MissingInput(f"declared outputs were not written: {missing}")
        self.manifest.write(self.out)
        return self.manifest


# -- prepare ----------------------------------------------------------------

def split_by_trajectory(groups, fractions, seed):
    """Assign whole trajectories to train/val/test.

    ``groups`` is a list of segment lists, one per trajectory. Trajectories
    are shuffled, then val and test are filled greedily up to their target
    segment counts; everything else goes to train. With enough one-segment
    trajectories the targets are met exactly.
    """
    total = sum(len(g) for g in groups)
    targets = {"val": round(total * fractions[1]), "test": round(total * fractions[2])}
    order = stream(seed, "split").permutation(len(groups))
    out = {name: [] for name in SPLITS}
    for i in order:
        g = groups[i]
        if not g:
            continue
        for name in ("val", "test"):
            if len(out[name]) + len(g) <= targets[name]:
                out[name].extend(g)
                break
        else:
            out["train"].extend(g)
    return out


def _load_source(cfg):
    data = cfg.data
    if data.source == "synthetic":
        return synth_trajectories(data.n_users, data.segs_per_user, cfg.seed, BEIJING)
    root = Path(data.path)
    if not root.is_dir():
        raise MissingInput(f"Geolife directory {root} does not exist")
    return load_geolife(root)


def prepare(cfg):
    stage = _Stage("prepare", cfg)
    trajectories, ids = stage.timed("load", _load_source, cfg)
    groups = [segment_trajectory(t, BEIJING, min_valid=cfg.data.min_valid, traj_id=tid)
              for t, tid in zip(trajectories, ids)]
    if not any(groups):
        raise EmptyDataset("the source produced no segments")
    splits = split_by_trajectory(groups, cfg.data.split_fractions, cfg.seed)
    for name in SPLITS:
        meta = {"split": name, "seed": cfg.seed, "source": cfg.data.source}
        stage.record(f"data.{name}", write_dataset(stage.path("data", f"{name}.ftrj"),
                                                   splits[name], BEIJING, meta))
        stage.record(f"data.{name}.csv", write_segments_csv(stage.path("data", f"{name}.csv"),
                                                            splits[name], BEIJING))
    stage.manifest.summary["counts"] = {k: len(v) for k, v in splits.items()}
    stage.finish()
    return splits


def load_split(cfg, name):
    path = Path(cfg.out) / "data" / f"{name}.ftrj"
    if not path.exists():
        raise MissingInput(f"{path} not found; run prepare first")
    segments, spec, _ = read_dataset(path)
    return segments, spec or BEIJING


# -- train ------------------------------------------------------------------

def make_clients(segments, cfg, count=None):
    return partition_dataset(segments, count or cfg.clients.count, cfg.clients.partition, cfg.seed)


def train(cfg, resume=False, clients=None):
    """Federated training; with ``resume`` continues from model/federation.fvae."""
    stage = _Stage("train", cfg)
    train_set, spec = load_split(cfg, "train")
    state_path = stage.path("model", "federation.fvae")
    start = None
    if resume:
        if not state_path.exists():
            raise MissingInput(f"{state_path} not found; nothing to resume")
        start, _ = FederationState.load(state_path)
    registered = make_clients(train_set, cfg, clients)
    params, reports = stage.timed(
        "federation", run_federation, registered, cfg.federation, cfg.vae, cfg.seed,
        resume=start, checkpoint=state_path, normalization=spec.to_dict())
    meta = {"rounds": len(reports), "vae": cfg.vae.to_dict()}
    stage.record("model", save_params(stage.path("model", "global.fvae"), params,
                                      spec.to_dict(), cfg.seed, meta))
    stage.record("state", state_path)
    stage.record("rounds", write_round_csv(stage.path("model", "rounds.csv"), reports))
    if reports:
        stage.record("plot.loss", plot_loss_curve(reports, stage.path("plots", "loss_curve.png")))
    stage.finish()
    return params, reports


# -- generate / anonymize -----------------------------------------------------

def load_model(cfg):
    path = Path(cfg.out) / "model" / "global.fvae"
    if not path.exists():
        raise MissingInput(f"{path} not found; run train first")
    params, _ = load_params(path)
    return TrajectoryVAE(cfg.vae, params)


def release(cfg, method, train_set, seed, spec=BEIJING, model=None):
    """Released dataset for ``method``; returns ``(segments, linkage or None)``."""
    an = cfg.anonymizers
    if method == "fedvae":
        model = model or load_model(cfg)
        return generate_like(model, train_set, seed, cfg.generate.per_mode), None
    if method == "perturb":
        return perturb(train_set, an.perturb, seed, spec), None
    if method == "mixzone":
        return mixzone(train_set, an.mixzone, seed, spec), None
    if method == "kanon":
        return kanonymize(train_set, an.kanon, seed, spec)
    raise UnknownMethod(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _write_release(stage, method, segments, linkage, spec):
    meta = {"method": method, "seed": stage.cfg.seed}
    stage.record(f"released.{method}", write_dataset(
        stage.path("released", f"{method}.ftrj"), segments, spec, meta))
    stage.record(f"released.{method}.csv", write_segments_csv(
        stage.path("released", f"{method}.csv"), segments, spec))
    if linkage is not None:
        stage.record(f"released.{method}.linkage", write_linkage_csv(
            stage.path("released", f"{method}-linkage.csv"), linkage))


def generate(cfg):
    stage = _Stage("generate", cfg)
    train_set, spec = load_split(cfg, "train")
    model = load_model(cfg)
    segments, _ = stage.timed("generate", release, cfg, "fedvae", train_set, cfg.seed, spec, model)
    _write_release(stage, "fedvae", segments, None, spec)
    stage.finish()
    return segments


def anonymize(cfg, method):
    if method == "fedvae" or method not in METHODS:
        raise UnknownMethod(f"unknown anonymizer {method!r}; choose from kanon, perturb, mixzone")
    stage = _Stage(f"anonymize-{method}", cfg)
    train_set, spec = load_split(cfg, "train")
    segments, linkage = stage.timed(method, release, cfg, method, train_set, cfg.seed, spec)
    _write_release(stage, method, segments, linkage, spec)
    stage.finish()
    return segments, linkage


# -- evaluate -----------------------------------------------------------------

def _read_release(cfg, method):
    path = Path(cfg.out) / "released" / f"{method}.ftrj"
    if not path.exists():
        raise MissingInput(f"{path} not found; run {'generate' if method == 'fedvae' else 'anonymize'} first")
    segments, _, _ = read_dataset(path)
    linkage = None
    if method == "kanon":
        lpath = path.with_name("kanon-linkage.csv")
        if not lpath.exists():
            raise MissingInput(f"{lpath} not found")
        linkage = read_linkage_csv(lpath)
    return segments, linkage


def score_release(cfg, method, originals, released, linkage, test_set, spec=BEIJING):
    """Similarity, trip-length KL and TMI reports for one released dataset."""
    ev = cfg.eval
    pairing = PAIRING.get(method, "index")
    sim = dataset_similarity(originals, released, pairing, linkage, spec=spec)
    kl = kl_histogram(trip_lengths(originals, spec), trip_lengths(released, spec), bins=ev.kl_bins)
    tmi = {"knn": tmi_knn(released, test_set, ev.knn_k, spec),
           "mlp": tmi_mlp(released, test_set, ev.mlp_epochs, ev.mlp_seeds, spec=spec)}
    return sim, kl, tmi


def _average(method, runs):
    sims, kls, tmis = zip(*runs)
    merged = {}
    for name in tmis[0]:
        base = tmis[0][name]
        accs = [a for t in tmis for a in t[name].accuracies]
        confs = [c for t in tmis for c in t[name].confusions]
        merged[name] = type(base)(base.classifier, accs, confs)
    return MethodResult(method, float(np.mean([s.mean for s in sims])), float(np.mean(kls)), merged)


def evaluate(cfg, methods=None):
    """Score every released dataset against the real splits.

    The first row ("real") evaluates the train split against itself. With
    ``eval.repeats > 1`` each method is released again under derived seeds
    and the metrics are averaged.
    """
    stage = _Stage("evaluate", cfg)
    methods = tuple(methods or cfg.eval.methods)
    for m in methods:
        if m not in METHODS:
            raise UnknownMethod(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    train_set, spec = load_split(cfg, "train")
    test_set, _ = load_split(cfg, "test")
    if not test_set:
        raise MissingInput("the test split is empty")
    results, lengths, kl_rows = [], {"real": trip_lengths(train_set, spec)}, []

    real = stage.timed("real", score_release, cfg, "real", train_set, train_set, None, test_set, spec)
    results.append(_average("real", [real]))
    stage.record("eval.similarity.real", write_similarity_csv(
        stage.path("eval", "similarity-real.csv"), real[0]))
    model = load_model(cfg) if "fedvae" in methods else None
    for m in methods:
        released, linkage = _read_release(cfg, m)
        runs = [stage.timed(m, score_release, cfg, m, train_set, released, linkage, test_set, spec)]
        stage.record(f"eval.similarity.{m}", write_similarity_csv(
            stage.path("eval", f"similarity-{m}.csv"), runs[0][0]))
        lengths[m] = trip_lengths(released, spec)
        for rep in range(1, cfg.eval.repeats):
            seed = derive_seed(cfg.seed, "repeat", rep)
            again, link = release(cfg, m, train_set, seed, spec, model)
            runs.append(score_release(cfg, m, train_set, again, link, test_set, spec))
        results.append(_average(m, runs))
        kl_rows.append((m, results[-1].kl))

    stage.record("eval.grid", write_grid_csv(stage.path("eval", "grid.csv"), results))
    table = stage.path("eval", "table.txt")
    table.write_text(render_table(results))
    stage.record("eval.table", table)
    kl_path = stage.path("eval", "kl.csv")
    with open(kl_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "kl_trip_length"])
        for m, v in kl_rows:
            w.writerow([m, repr(v)])
    stage.record("eval.kl", kl_path)
    stage.record("plot.trip_lengths", plot_trip_lengths(lengths, stage.path("plots", "trip_lengths.png"),
                                                        cfg.eval.kl_bins))
    if kl_rows:
        stage.record("plot.kl", plot_kl_bars(dict(kl_rows), stage.path("plots", "kl.png")))
    state_path = Path(cfg.out) / "model" / "federation.fvae"
    if state_path.exists():
        st, _ = FederationState.load(state_path)
        if st.reports:
            stage.record("plot.loss", plot_loss_curve(st.reports, stage.path("plots", "loss_curve.png")))
    stage.finish()
    return results


# -- scalability --------------------------------------------------------------

def subsample(segments, n, seed):
    """``n`` segments chosen without replacement, original order kept."""
    if n is None or n >= len(segments):
        return list(segments)
    idx = np.sort(stream(seed, "subsample").choice(len(segments), size=n, replace=False))
    return [segments[i] for i in idx]


def fitted_rounds(segments, n_clients, cfg, seed):
    """Rounds until the global loss flattens for ``n_clients`` clients.

    Returns ``(rounds, converged, reports)``; a run that never flattens
    reports the round cap with ``converged`` False.
    """
    sc = cfg.scalability
    fed = cfg.federation
    fed = type(fed)(**{**asdict(fed), "rounds": sc.rounds, "tolerance": None})
    clients = partition_dataset(segments, n_clients, cfg.clients.partition, seed)
    _, reports = run_federation(clients, fed, cfg.vae, seed)
    try:
        return fitted_epochs(reports, sc.tolerance, sc.smoothing, sc.patience), True, reports
    except NotConverged as exc:
        return exc.rounds, False, reports


def scalability(cfg, client_counts=None):
    stage = _Stage("scalability", cfg)
    counts = tuple(client_counts or cfg.scalability.client_counts)
    train_set, _ = load_split(cfg, "train")
    data = subsample(train_set, cfg.scalability.segments, cfg.seed)
    rows = []
    for n in counts:
        rounds, ok, reports = stage.timed(f"clients={n}", fitted_rounds, data, n, cfg, cfg.seed)
        rows.append({"clients": n, "fitted_epochs": rounds, "converged": ok,
                     "final_loss": reports[-1].global_loss, "segments": len(data)})
    path = stage.path("scalability", "fitted_epochs.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({**r, "final_loss": repr(r["final_loss"])})
    stage.record("scalability", path)
    stage.record("plot.scalability", plot_scalability(rows, stage.path("plots", "scalability.png")))
    stage.finish()
    return rows

