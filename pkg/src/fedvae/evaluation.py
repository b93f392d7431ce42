"""Privacy, statistical fidelity and downstream utility of a released dataset.

* similarity: ``alpha * beta_mode / mean point distance`` between a real and a
  released segment (lower means better privacy);
* kl_histogram: KL divergence between two trip-length distributions;
* tmi_knn / tmi_mlp: travel-mode identification trained on released data and
  tested on real data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingLinkage, NoOverlap
from .nn import (AdamState, ParamSet, Tensor, adam_step, cross_entropy, linear, no_grad,
                 relu, softmax, stream)
from .traj.geo import haversine_array, step_lengths_km
from .traj.types import BEIJING, MODES, TravelMode

DEFAULT_BETAS = {
    TravelMode.BUS: 0.5,
    TravelMode.CAR: 1.0,
    TravelMode.WALKING: 0.05,
    TravelMode.BIKING: 0.2,
    TravelMode.SUBWAY: 3.0,
}

FEATURE_NAMES = ("mean_step_km", "step_var", "max_step_km", "trip_km", "heading_change")


# -- similarity ---------------------------------------------------------------

@dataclass(frozen=True)
class SimilarityConfig:
    alpha: float = 1.0
    beta_by_mode: dict = field(default_factory=lambda: dict(DEFAULT_BETAS))
    floor_km: float = 0.001

    def __post_init__(self):
        if self.floor_km <= 0 or any(b <= 0 for b in self.beta_by_mode.values()):
            raise ValueError("betas and the distance floor must be > 0")

    def beta(self, mode):
        return self.beta_by_mode[TravelMode(mode)]


@dataclass
class SimilarityReport:
    values: np.ndarray
    pairs: list                 # (original seg_id, [released seg_ids])
    saturated: int              # pairs whose distance hit the floor

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def median(self):
        return float(np.median(self.values))

    @property
    def max(self):
        return float(np.max(self.values))


def mean_distance_km(a, b, spec=BEIJING):
    """Mean haversine distance over the common valid prefix of two segments."""
    n = min(a.valid_length, b.valid_length)
    if n == 0:
        raise NoOverlap(f"{a.seg_id!r} and {b.seg_id!r} share no valid steps")
    pa = spec.denormalize(a.coords[:n])
    pb = spec.denormalize(b.coords[:n])
    return float(np.mean(haversine_array(pa[:, 0], pa[:, 1], pb[:, 0], pb[:, 1])))


def similarity(orig, released, mode=None, cfg=None, spec=BEIJING):
    cfg = cfg or SimilarityConfig()
    mode = orig.mode if mode is None else TravelMode(mode)
    dist = mean_distance_km(orig, released, spec)
    return cfg.alpha * cfg.beta(mode) / max(dist, cfg.floor_km)


def _nearest_same_mode(originals, released, spec, chunk=64):
    """For each released segment, ``(index of nearest original, mean distance)``.

    Candidates are restricted to originals of the same mode when any exist.
    """
    lat_o = np.radians(np.stack([spec.denormalize(s.coords)[:, 0] for s in originals]))
    lon_o = np.radians(np.stack([spec.denormalize(s.coords)[:, 1] for s in originals]))
    len_o = np.array([s.valid_length for s in originals])
    modes_o = np.array([s.mode.index for s in originals])
    cos_o = np.cos(lat_o)
    best = []
    for r in released:
        cand = np.flatnonzero(modes_o == r.mode.index)
        if cand.size == 0:
            cand = np.arange(len(originals))
        pr = np.radians(spec.denormalize(r.coords))
        n_r = r.valid_length
        top_idx, top_d = -1, math.inf
        for lo in range(0, cand.size, chunk):
            idx = cand[lo:lo + chunk]
            dphi = lat_o[idx] - pr[None, :, 0]
            dlmb = lon_o[idx] - pr[None, :, 1]
            h = np.sin(dphi / 2) ** 2 + cos_o[idx] * np.cos(pr[None, :, 0]) * np.sin(dlmb / 2) ** 2
            d = 2 * 6371.0 * np.arcsin(np.sqrt(np.clip(h, 0, 1)))
            n = np.minimum(len_o[idx], n_r)
            steps = np.arange(d.shape[1])[None, :] < n[:, None]
            mean = np.where(n > 0, (d * steps).sum(axis=1) / np.maximum(n, 1), np.inf)
            k = int(np.argmin(mean))
            if mean[k] < top_d:
                top_idx, top_d = int(idx[k]), float(mean[k])
        if top_idx < 0:
            raise NoOverlap(f"released segment {r.seg_id!r} overlaps no original")
        best.append((top_idx, top_d))
    return best


def dataset_similarity(originals, released, pairing="index", linkage=None, cfg=None,
                       spec=BEIJING):
    """Per-pair similarities and their summary.

    ``pairing``:
      * ``"index"``: the i-th released segment is compared with the i-th original;
      * ``"linkage"``: each original is compared with every released segment
        linked to it (``linkage`` maps original seg_id to released seg_ids)
        and contributes the mean;
      * ``"nearest"``: each released segment is compared with its closest
        original of the same mode.
    """
    cfg = cfg or SimilarityConfig()
    values, pairs, saturated = [], [], 0

    def score(o, r, dist=None):
        nonlocal saturated
        d = mean_distance_km(o, r, spec) if dist is None else dist
        if d <= cfg.floor_km:
            saturated += 1
        return cfg.alpha * cfg.beta(o.mode) / max(d, cfg.floor_km)

    if pairing == "index":
        if len(originals) != len(released):
            raise ValueError("index pairing needs equally long datasets")
        for o, r in zip(originals, released):
            values.append(score(o, r))
            pairs.append((o.seg_id, [r.seg_id]))
    elif pairing == "linkage":
        if linkage is None:
            raise MissingLinkage("linkage pairing needs a linkage table")
        by_id = {s.seg_id: s for s in released}
        for o in originals:
            ids = linkage.get(o.seg_id)
            if not ids:
                raise MissingLinkage(f"original {o.seg_id!r} has no linked segments")
            missing = [i for i in ids if i not in by_id]
            if missing:
                raise MissingLinkage(f"linked segment {missing[0]!r} is not in the release")
            values.append(float(np.mean([score(o, by_id[i]) for i in ids])))
            pairs.append((o.seg_id, list(ids)))
    elif pairing == "nearest":
        for r, (k, d) in zip(released, _nearest_same_mode(originals, released, spec)):
            values.append(score(originals[k], r, d))
            pairs.append((originals[k].seg_id, [r.seg_id]))
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    if not values:
        raise ValueError("no pairs to compare")
    return SimilarityReport(np.asarray(values, dtype=np.float64), pairs, saturated)


# -- trip-length statistics -----------------------------------------------------

def trip_lengths(segments, spec=BEIJING):
    """Path length in km over the valid steps of each segment."""
    return np.array([step_lengths_km(spec.denormalize(s.valid_coords)).sum() for s in segments])


def kl_histogram(a, b, bins=20, eps=1e-9):
    """KL(a || b) between two samples histogrammed on shared equal-width bins.

    Bins span the joint range of both samples. Bin masses are smoothed by
    ``eps`` and renormalized, so disjoint supports give a large but finite
    value. If every value in both samples is identical the result is 0.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("kl_histogram needs non-empty samples")
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    if hi == lo:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(a, edges)[0] / a.size + eps
    q = np.histogram(b, edges)[0] / b.size + eps
    p /= p.sum()
    q /= q.sum()
    return float(max(np.sum(p * np.log(p / q)), 0.0))


# -- travel-mode identification ---------------------------------------------------

def segment_features(seg, spec=BEIJING):
    """Hand-made kinematic features over the valid steps of one segment."""
    latlon = spec.denormalize(seg.valid_coords)
    steps = step_lengths_km(latlon)
    if steps.size == 0:
        return np.zeros(len(FEATURE_NAMES))
    kx, ky = spec.km_per_unit
    xy = seg.valid_coords * (kx, ky)
    delta = np.diff(xy, axis=0)
    moving = np.hypot(delta[:, 0], delta[:, 1]) > 1e-9
    headings = np.arctan2(delta[moving, 1], delta[moving, 0])
    if headings.size >= 2:
        turn = np.angle(np.exp(1j * np.diff(headings)))
        heading_rate = float(np.mean(np.abs(turn)))
    else:
        heading_rate = 0.0
    return np.array([steps.mean(), steps.var(), steps.max(), steps.sum(), heading_rate])


def feature_matrix(segments, spec=BEIJING):
    return np.stack([segment_features(s, spec) for s in segments])


def labels_of(segments):
    return np.array([s.mode.index for s in segments])


def _zscore(train_x, test_x):
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train_x - mu) / sd, (test_x - mu) / sd


def confusion_matrix(truth, pred, n_classes=len(MODES)):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


@dataclass
class TmiReport:
    classifier: str
    accuracies: list
    confusions: list            # one (classes x classes) matrix per run; rows = truth

    @property
    def accuracy_mean(self):
        total = self.confusion
        return float(np.trace(total) / total.sum())

    @property
    def accuracy_std(self):
        return float(np.std(self.accuracies))

    @property
    def confusion(self):
        return np.sum(self.confusions, axis=0)


def knn_predict(train_x, train_y, test_x, k):
    """Majority vote among the ``k`` nearest rows; ties go to the tied label
    whose closest member is nearest."""
    k = min(k, len(train_x))
    preds = np.empty(len(test_x), dtype=np.int64)
    for lo in range(0, len(test_x), 256):
        block = test_x[lo:lo + 256]
        d = ((block[:, None, :] - train_x[None, :, :]) ** 2).sum(axis=-1)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        for i, nn in enumerate(order):
            labels = train_y[nn]
            counts = np.bincount(labels)
            tied = np.flatnonzero(counts == counts.max())
            if tied.size == 1:
                preds[lo + i] = tied[0]
            else:
                preds[lo + i] = next(lab for lab in labels if lab in tied)
    return preds


def tmi_knn(train, test, k_neighbors=5, spec=BEIJING):
    if not train or not test:
        raise ValueError("tmi_knn needs non-empty train and test sets")
    tx, vx = _zscore(feature_matrix(train, spec), feature_matrix(test, spec))
    ty, vy = labels_of(train), labels_of(test)
    pred = knn_predict(tx, ty, vx, k_neighbors)
    cm = confusion_matrix(vy, pred)
    return TmiReport("knn", [float(np.trace(cm) / cm.sum())], [cm])


def _mlp_init(rng, sizes):
    p = {}
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        limit = math.sqrt(6.0 / (a + b))
        p[f"l{i}.w"] = rng.uniform(-limit, limit, size=(a, b))
        p[f"l{i}.b"] = np.zeros(b)
    return ParamSet.from_arrays(p)


def _mlp_forward(params, x, layers):
    h = x
    for i in range(layers):
        h = linear(h, params[f"l{i}.w"], params[f"l{i}.b"])
        if i < layers - 1:
            h = relu(h)
    return softmax(h, axis=-1)


def tmi_mlp(train, test, epochs=300, seeds=(0, 1, 2, 3, 4), hidden=(64, 32), lr=0.01,
            batch_size=256, spec=BEIJING):
    """Two-hidden-layer perceptron on z-scored features, one run per seed."""
    if not train or not test:
        raise ValueError("tmi_mlp needs non-empty train and test sets")
    tx, vx = _zscore(feature_matrix(train, spec), feature_matrix(test, spec))
    ty, vy = labels_of(train), labels_of(test)
    onehot = np.eye(len(MODES))[ty]
    sizes = (tx.shape[1],) + tuple(hidden) + (len(MODES),)
    layers = len(sizes) - 1
    accs, cms = [], []
    for seed in seeds:
        params = _mlp_init(stream(seed, "mlp-init"), sizes)
        state = AdamState(lr=lr)
        for epoch in range(epochs):
            order = stream(seed, "mlp-epoch", epoch).permutation(len(tx))
            for lo in range(0, len(order), batch_size):
                idx = order[lo:lo + batch_size]
                params.zero_grad()
                probs = _mlp_forward(params, Tensor(tx[idx]), layers)
                cross_entropy(probs, onehot[idx]).backward()
                adam_step(params, state)
        with no_grad():
            pred = np.argmax(_mlp_forward(params, Tensor(vx), layers).data, axis=1)
        cm = confusion_matrix(vy, pred)
        cms.append(cm)
        accs.append(float(np.trace(cm) / cm.sum()))
    return TmiReport("mlp", accs, cms)


CLASSIFIERS = {"knn": tmi_knn, "mlp": tmi_mlp}


def utility_pipeline(released_train, real_test, classifiers=("knn", "mlp"), spec=BEIJING,
                     **options):
    """Train each classifier on released data and score it on real held-out data."""
    seen = {s.valid_coords.tobytes() for s in released_train}
    if any(s.valid_coords.tobytes() in seen for s in real_test):
        raise ValueError("released training data and real test data overlap")
    reports = []
    for name in classifiers:
        fn = CLASSIFIERS[name]
        reports.append(fn(released_train, real_test, spec=spec, **options.get(name, {})))
    return reports


# -- report writers ---------------------------------------------------------------

@dataclass
class MethodResult:
    method: str
    similarity: float
    kl: float
    tmi: dict                   # classifier -> TmiReport


def write_grid_csv(path, results):
    """Metric-by-method grid, one row per method."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted({c for r in results for c in r.tmi})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["method", "similarity", "kl_trip_length"]
        for c in names:
            header += [f"{c}_accuracy", f"{c}_std"]
        w.writerow(header)
        for r in results:
            row = [r.method, repr(r.similarity), repr(r.kl)]
            for c in names:
                rep = r.tmi.get(c)
                row += ["", ""] if rep is None else [repr(rep.accuracy_mean), repr(rep.accuracy_std)]
            w.writerow(row)
    return path


def render_table(results):
    """Plain-text comparison table of methods."""
    names = sorted({c for r in results for c in r.tmi})
    head = ["Method", "Similarity", "KL"] + [f"{c} acc" for c in names]
    rows = []
    for r in results:
        cells = [r.method, f"{r.similarity:.4f}", f"{r.kl:.4f}"]
        for c in names:
            rep = r.tmi.get(c)
            cells.append("-" if rep is None
                         else f"{100 * rep.accuracy_mean:.2f}% ± {rep.accuracy_std:.3f}")
        rows.append(cells)
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines) + "\n"


def write_similarity_csv(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["original_id", "released_ids", "similarity"])
        for (oid, rids), v in zip(report.pairs, report.values):
            w.writerow([oid, ";".join(rids), repr(float(v))])
    return path
