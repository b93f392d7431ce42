"""Simulated federated training of the trajectory VAE.

Everything runs in one process. Each round the server broadcasts the global
weights, every selected client runs :func:`~fedvae.vae.train_local` on its own
data, and the returned weights are merged with a sample-weighted mean.

Clients keep their Adam moments between rounds, and their epoch counter keeps
running (round ``r`` covers local epochs ``r*E .. r*E+E-1``). With a single
client this makes ``R`` rounds of ``E`` epochs identical to one centralized
run of ``R*E`` epochs.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ClientTrainingError, EmptyUpdateSet, NotConverged, SchemaMismatch,
                     TooFewSegments)
from .nn import AdamState, ParamSet, derive_seed, read_arrays, stream, write_arrays
from .vae import LocalState, TrajectoryVAE, VaeConfig, init_params, train_local

THREADS_ENV = "FEDVAE_THREADS"


@dataclass
class Client:
    id: str
    dataset: list
    seed: int
    params: ParamSet | None = None
    state: LocalState | None = None

    def __post_init__(self):
        if not self.dataset:
            raise TooFewSegments(f"client {self.id!r} has no segments")

    @property
    def sample_count(self):
        return len(self.dataset)


@dataclass
class ClientUpdate:
    client_id: str
    params: ParamSet
    sample_count: int
    local_loss: float

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass
class RoundReport:
    round: int                 # 1-based
    selected: list
    client_losses: dict
    global_loss: float
    wall_time: float
    registered: list = field(default_factory=list)

    def to_dict(self):
        return {"round": self.round, "selected": list(self.selected),
                "client_losses": dict(self.client_losses), "global_loss": self.global_loss,
                "wall_time": self.wall_time, "registered": list(self.registered)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["round"], list(d["selected"]), dict(d["client_losses"]),
                   d["global_loss"], d["wall_time"], list(d.get("registered", [])))


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 200
    local_epochs: int = 1
    selection_fraction: float = 0.2
    large_scale_threshold: int = 20
    tolerance: float | None = None     # relative improvement; None disables early stop
    patience: int = 10
    drop_probability: float = 0.0      # simulated check-in failures
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.selection_fraction <= 1.0:
            raise ValueError("selection_fraction must be in (0, 1]")
        if self.rounds < 0 or self.local_epochs < 1:
            raise ValueError("rounds must be >= 0 and local_epochs >= 1")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ValueError("drop_probability must be in [0, 1)")
        if self.tolerance is not None and self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.patience < 1 or self.threads < 1:
            raise ValueError("patience and threads must be >= 1")


def partition_dataset(segments, n_clients, strategy="by_user", seed=0):
    """Split ``segments`` into ``n_clients`` disjoint, non-empty client datasets.

    ``by_user`` keeps each user's segments together and deals users out
    round-robin in sorted order, so ``n_clients`` must not exceed the user
    count. ``uniform`` shuffles segments and cuts them into near-equal parts.
    """
    segments = list(segments)
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if strategy == "by_user":
        users = sorted({s.user_id for s in segments})
        if len(users) < n_clients:
            raise TooFewSegments(f"{len(users)} users cannot fill {n_clients} clients")
        slot = {u: i % n_clients for i, u in enumerate(users)}
        parts = [[] for _ in range(n_clients)]
        for s in segments:
            parts[slot[s.user_id]].append(s)
    elif strategy == "uniform":
        if len(segments) < n_clients:
            raise TooFewSegments(f"{len(segments)} segments cannot fill {n_clients} clients")
        order = stream(seed, "partition").permutation(len(segments))
        parts = [[segments[i] for i in chunk] for chunk in np.array_split(order, n_clients)]
    else:
        raise ValueError(f"unknown partition strategy {strategy!r}")
    width = len(str(n_clients - 1))
    return [Client(f"c{k:0{width}d}", part, derive_seed(seed, "client", k))
            for k, part in enumerate(parts)]


def fedavg(updates):
    """Sample-weighted mean of client weights.

    Summation runs in ascending client-id order. The mean is formed as an
    offset from the first client's weights and then clipped to the element-wise
    envelope of all clients, so one client (or several identical ones) comes
    back bit-exact and the result never leaves ``[min, max]``.
    """
    if not updates:
        raise EmptyUpdateSet("fedavg needs at least one update")
    ordered = sorted(updates, key=lambda u: u.client_id)
    base = ordered[0].params
    for u in ordered[1:]:
        if u.params.schema() != base.schema():
            raise SchemaMismatch(f"client {u.client_id!r} parameter schema differs")
    total = float(sum(u.sample_count for u in ordered))
    weights = [u.sample_count / total for u in ordered]
    merged = {}
    for name in base.names():
        ref = base[name].data
        acc = np.zeros_like(ref)
        lo, hi = ref.copy(), ref.copy()
        for w, u in zip(weights, ordered):
            a = u.params[name].data
            acc += w * (a - ref)
            np.minimum(lo, a, out=lo)
            np.maximum(hi, a, out=hi)
        merged[name] = np.clip(ref + acc, lo, hi)
    return ParamSet.from_arrays(merged)


def always_available(client, round_idx):
    return True


def select_clients(registered, cfg, round_idx, seed, available=always_available):
    """Clients taking part in round ``round_idx`` (0-based).

    Small federations (``<= large_scale_threshold``) or ``fraction == 1`` use
    every client; larger ones draw ``ceil(fraction * n)`` without replacement.
    Selected clients then check in: those failing ``available`` or the
    configured drop probability sit the round out.
    """
    if not registered:
        raise ValueError("no registered clients")
    n = len(registered)
    rng = stream(seed, "select", round_idx)
    if n <= cfg.large_scale_threshold or cfg.selection_fraction >= 1.0:
        chosen = list(registered)
    else:
        count = math.ceil(cfg.selection_fraction * n)
        idx = np.sort(rng.choice(n, size=count, replace=False))
        chosen = [registered[i] for i in idx]
    if cfg.drop_probability > 0.0:
        drops = rng.random(len(chosen)) < cfg.drop_probability
        chosen = [c for c, d in zip(chosen, drops) if not d]
    return [c for c in chosen if available(c, round_idx)]


def thread_count(cfg):
    env = os.environ.get(THREADS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1")
        return n
    return cfg.threads


def _train_client(client, global_params, vae_cfg, fed_cfg, round_idx):
    try:
        if client.state is None:
            client.state = LocalState(AdamState(lr=vae_cfg.lr))
        model = TrajectoryVAE(vae_cfg, params=global_params.copy())
        params, history = train_local(
            model, client.dataset, fed_cfg.local_epochs, client.seed,
            start_epoch=round_idx * fed_cfg.local_epochs, state=client.state,
            early_stopping=False)
    except Exception as exc:
        raise ClientTrainingError(client.id, exc) from exc
    client.params = params
    return ClientUpdate(client.id, params, client.sample_count, history[-1].total)


@dataclass
class FederationState:
    """Everything needed to continue a federation after ``completed`` rounds."""

    completed: int
    global_params: ParamSet
    reports: list
    client_states: dict     # client id -> LocalState

    def save(self, path, normalization=None, seed=None):
        arrays = {f"global/{k}": v for k, v in self.global_params.arrays().items()}
        clients = {}
        for cid in sorted(self.client_states):
            st = self.client_states[cid]
            for k in sorted(st.adam.m):
                arrays[f"client/{cid}/m/{k}"] = st.adam.m[k]
                arrays[f"client/{cid}/v/{k}"] = st.adam.v[k]
            clients[cid] = {"step": st.adam.step, "lr": st.adam.lr, "armed": st.armed}
        meta = {"kind": "federation", "completed": self.completed, "clients": clients,
                "reports": [r.to_dict() for r in self.reports]}
        return write_arrays(path, arrays, normalization=normalization, seed=seed, meta=meta)

    @classmethod
    def load(cls, path):
        arrays, header = read_arrays(path)
        meta = header["meta"]
        if meta.get("kind") != "federation":
            raise ValueError(f"{path} is not a federation checkpoint")
        glob = {k[len("global/"):]: v for k, v in arrays.items() if k.startswith("global/")}
        states = {}
        for cid, info in meta["clients"].items():
            m, v = {}, {}
            for key, arr in arrays.items():
                if key.startswith(f"client/{cid}/m/"):
                    m[key[len(f"client/{cid}/m/"):]] = arr
                elif key.startswith(f"client/{cid}/v/"):
                    v[key[len(f"client/{cid}/v/"):]] = arr
            adam = AdamState(lr=info["lr"], step=info["step"], m=m, v=v)
            states[cid] = LocalState(adam, info["armed"])
        return cls(meta["completed"], ParamSet.from_arrays(glob),
                   [RoundReport.from_dict(r) for r in meta["reports"]], states), header


def _stalled(reports, cfg):
    if cfg.tolerance is None or len(reports) <= cfg.patience:
        return False
    recent = [r.global_loss for r in reports[-(cfg.patience + 1):]]
    return all(_rel_improvement(a, b) < cfg.tolerance for a, b in zip(recent, recent[1:]))


def _rel_improvement(prev, cur):
    return (prev - cur) / max(abs(prev), 1e-300)


def run_federation(clients, cfg, vae_cfg=None, seed=0, *, resume=None, checkpoint=None,
                   on_round=None, available=always_available, normalization=None):
    """Train a global model; returns ``(global_params, reports)``.

    ``resume`` is a :class:`FederationState` (or a checkpoint path) to continue
    from; ``checkpoint`` is a path rewritten after every round. ``on_round``
    is called with each RoundReport as it completes.
    """
    vae_cfg = vae_cfg or VaeConfig()
    clients = sorted(clients, key=lambda c: c.id)
    if not clients:
        raise ValueError("run_federation needs at least one client")
    if len({c.id for c in clients}) != len(clients):
        raise ValueError("client ids must be unique")
    if resume is not None:
        if not isinstance(resume, FederationState):
            resume, _ = FederationState.load(resume)
        global_params = resume.global_params.copy()
        reports = list(resume.reports)
        start = resume.completed
        for c in clients:
            if c.id in resume.client_states:
                c.state = resume.client_states[c.id]
    else:
        global_params = init_params(vae_cfg, seed)
        reports, start = [], 0
    workers = thread_count(cfg)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(start, cfg.rounds):
            if _stalled(reports, cfg):
                break
            t0 = time.perf_counter()
            selected = select_clients(clients, cfg, r, seed, available)
            if not selected:
                raise EmptyUpdateSet(f"no client checked in for round {r + 1}")
            if pool is None:
                updates = [_train_client(c, global_params, vae_cfg, cfg, r) for c in selected]
            else:
                futures = [pool.submit(_train_client, c, global_params, vae_cfg, cfg, r)
                           for c in selected]
                updates = [f.result() for f in futures]
            global_params = fedavg(updates)
            n = sum(u.sample_count for u in updates)
            loss = float(sum(u.sample_count * u.local_loss for u in updates) / n)
            report = RoundReport(r + 1, [u.client_id for u in updates],
                                 {u.client_id: u.local_loss for u in updates}, loss,
                                 time.perf_counter() - t0, [c.id for c in clients])
            reports.append(report)
            if checkpoint is not None:
                states = {c.id: c.state for c in clients if c.state is not None}
                FederationState(r + 1, global_params, reports, states).save(
                    checkpoint, normalization=normalization, seed=seed)
            if on_round is not None:
                on_round(report)
    finally:
        if pool is not None:
            pool.shutdown()
    return global_params, reports


def _ema(values, alpha):
    out, s = [], None
    for v in values:
        s = v if s is None else alpha * v + (1.0 - alpha) * s
        out.append(s)
    return out


def fitted_epochs(reports, tolerance, smoothing=None, patience=1):
    """Round (1-based) after which the global loss stops improving.

    The loss curve is optionally EMA-smoothed (``smoothing`` is the weight on
    the newest value). The answer is the first round ``r`` such that every
    later round improves on its predecessor by less than ``tolerance``, and at
    least ``patience`` later rounds exist to show it. Improvements are measured
    as a fraction of the first round's loss. A fraction of the current loss
    would tighten as the loss falls and end up chasing round-to-round noise.
    """
    if not reports:
        raise ValueError("fitted_epochs needs at least one report")
    losses = [r.global_loss if isinstance(r, RoundReport) else float(r) for r in reports]
    if smoothing is not None:
        losses = _ema(losses, smoothing)
    n = len(losses)
    scale = max(abs(losses[0]), 1e-300)
    fitted = n
    for i in range(n - 1, 0, -1):
        if (losses[i - 1] - losses[i]) / scale >= tolerance:
            break
        fitted = i
    if n - fitted < patience:
        raise NotConverged(f"loss still improving by >= {tolerance} at round {n}", n)
    return fitted


def write_round_csv(path, reports):
    """One row per registered client per round: ``round,client_id,loss,selected``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "client_id", "loss", "selected"])
        for rep in reports:
            ids = rep.registered or sorted(rep.client_losses)
            for cid in ids:
                loss = rep.client_losses.get(cid)
                w.writerow([rep.round, cid, "" if loss is None else repr(loss),
                            int(cid in rep.client_losses)])
    return path
