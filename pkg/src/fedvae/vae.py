"""Sequence VAE over trajectory segments.

Encoder: a GRU reads the segment (coordinates plus scaled step displacements)
under its validity mask; its final state is concatenated with an embedding of
the travel-mode one-hot and mapped to the posterior mean and log-variance.

Decoder: from ``[z, mode_hint]`` a GRU is unrolled over the sequence length
and emits per-step displacements in logit space. Their running sum, offset by
a start logit, is squashed by a sigmoid, so reconstructions always lie in the
unit square. A separate linear + softmax head on ``z`` recovers the mode.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyDataset
from .nn import (AdamState, GruParams, ParamSet, StepSchedule, Tensor, adam_step,
                 clip_grad_norm, concat, exp, cross_entropy, cumsum, gru_sequence,
                 kl_diag_gaussian, linear, mse_masked, mul, no_grad, reparameterize,
                 log, reshape, sigmoid, slice_, softmax, standard_normal, stream, sum_, tanh)
from .traj.types import MODES, SEQ_LEN, SegmentBatch, TravelMode, batch_segments, make_segment

TRUNCATION_POLICIES = ("always", "armed", "off")


@dataclass(frozen=True)
class VaeConfig:
    hidden_size: int = 64
    latent_dim: int = 16
    mode_count: int = 5
    seq_len: int = SEQ_LEN
    mode_embed: int = 8
    recon_truncation_threshold: float = 0.000625
    # "always": truncate from the first step; "armed": only after an epoch's
    # mean traj_mse has reached the threshold once; "off": never.
    truncation: str = "armed"
    truncation_scope: str = "batch"   # or "sample"
    truncation_drops_mode_ce: bool = True
    recon_weight: float = 1.0
    kl_weight: float = 1.0
    lr: float = 0.01
    lr_decayed: float = 0.001
    lr_decay_epoch: int = 500
    batch_size: int = 64
    grad_clip: float = 5.0
    patience: int = 50
    ema_alpha: float = 0.1
    min_delta: float = 1e-5
    step_input_scale: float = 100.0
    encoder_start_input: bool = True
    base_step: float = 0.005        # initial per-step move in logit units
    turn_scale: float = 0.05        # heading change per unit of turn output
    speed_modulation: float = 0.15  # bound on the log-speed swing around the mode level
    speed_level_rate: float = 10.0  # log-speed per unit of the mode-level parameters

    def __post_init__(self):
        if self.recon_truncation_threshold <= 0:
            raise ValueError("truncation threshold must be > 0")
        if self.truncation not in TRUNCATION_POLICIES:
            raise ValueError(f"truncation must be one of {TRUNCATION_POLICIES}")
        if self.truncation_scope not in ("batch", "sample"):
            raise ValueError("truncation_scope must be 'batch' or 'sample'")
        if min(self.hidden_size, self.latent_dim, self.batch_size, self.seq_len) < 1:
            raise ValueError("sizes must be positive")

    def schedule(self):
        return StepSchedule(self.lr, self.lr_decayed, self.lr_decay_epoch)

    def to_dict(self):
        return asdict(self)


@dataclass
class VaeOutput:
    traj_recon: Tensor   # (B, T, 2)
    mode_recon: Tensor   # (B, modes) probabilities
    mu: Tensor
    logvar: Tensor
    z: Tensor


@dataclass
class LossBreakdown:
    total: float
    traj_mse: float
    mode_ce: float
    kl: float
    truncated: bool
    truncated_fraction: float = 0.0
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def as_row(self):
        return {"total": self.total, "traj_mse": self.traj_mse, "mode_ce": self.mode_ce,
                "kl": self.kl, "truncated": self.truncated_fraction}


def _glorot(rng, fan_in, fan_out, gain=1.0):
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(cfg, seed):
    """Fresh parameters; identical for identical ``(cfg, seed)``."""
    rng = stream(seed, "vae-init")
    H, L, M, E = cfg.hidden_size, cfg.latent_dim, cfg.mode_count, cfg.mode_embed
    enc_in, dec_in = 6 if cfg.encoder_start_input else 4, L + M
    p = {}
    for prefix, n_in in (("enc.gru", enc_in), ("dec.gru", dec_in)):
        p[f"{prefix}.w_x"] = _glorot(rng, n_in, 3 * H)
        p[f"{prefix}.w_h"] = np.concatenate(
            [np.linalg.qr(rng.normal(size=(H, H)))[0] for _ in range(3)], axis=1)
        p[f"{prefix}.b_x"] = np.zeros(3 * H)
        p[f"{prefix}.b_h"] = np.zeros(3 * H)
    p["enc.mode.w"] = _glorot(rng, M, E)
    p["enc.mode.b"] = np.zeros(E)
    p["enc.mu.w"] = _glorot(rng, H + E, L)
    p["enc.mu.b"] = np.zeros(L)
    p["enc.logvar.w"] = _glorot(rng, H + E, L, gain=0.1)
    p["enc.logvar.b"] = np.zeros(L)
    p["dec.init.w"] = _glorot(rng, dec_in, H)
    p["dec.init.b"] = np.zeros(H)
    p["dec.start.w"] = _glorot(rng, dec_in, 2, gain=0.1)
    p["dec.start.b"] = np.zeros(2)
    p["dec.heading.w"] = _glorot(rng, dec_in, 2)
    p["dec.heading.b"] = np.zeros(2)
    p["dec.turn.w"] = _glorot(rng, H, 2)
    p["dec.turn.b"] = np.zeros(2)
    p["dec.speed.w"] = _glorot(rng, H, 1)
    p["dec.speed.b"] = np.zeros(1)
    p["dec.gain.w"] = np.zeros((M, 1))
    p["dec.gain.b"] = np.full(1, math.log(cfg.base_step) / cfg.speed_level_rate)
    p["dec.mode.w"] = _glorot(rng, L, M)
    p["dec.mode.b"] = np.zeros(M)
    return ParamSet.from_arrays(p)


def _gru(params, prefix):
    return GruParams(params[f"{prefix}.w_x"], params[f"{prefix}.w_h"],
                     params[f"{prefix}.b_x"], params[f"{prefix}.b_h"])


def encoder_inputs(coords, mask, scale, with_start=True):
    """Per-step encoder features, zeroed on padding.

    Position and scaled displacement, plus (with ``with_start``) the start
    point repeated on every step so the final state need not carry it
    through the whole sequence.
    """
    steps = np.zeros_like(coords)
    steps[:, 1:] = coords[:, 1:] - coords[:, :-1]
    steps[:, 1:] *= mask[:, 1:, None] * mask[:, :-1, None]
    parts = [coords, scale * steps]
    if with_start:
        parts.append(np.broadcast_to(coords[:, :1], coords.shape))
    return np.concatenate(parts, axis=-1) * mask[:, :, None]


class TrajectoryVAE:
    def __init__(self, cfg=None, params=None, seed=0):
        self.cfg = cfg or VaeConfig()
        self.params = params if params is not None else init_params(self.cfg, seed)

    def encode(self, batch):
        """``(mu, logvar)`` for a Segment or a SegmentBatch."""
        if not hasattr(batch, "modes"):
            batch = batch_segments([batch])
        p = self.params
        x = encoder_inputs(batch.coords, batch.mask, self.cfg.step_input_scale,
                           self.cfg.encoder_start_input)
        h0 = np.zeros((len(batch), self.cfg.hidden_size))
        states = gru_sequence(x, h0, _gru(p, "enc.gru"), mask=batch.mask)
        last = slice_(states, (slice(None), -1))
        emb = tanh(linear(batch.modes, p["enc.mode.w"], p["enc.mode.b"]))
        feat = concat([last, emb], axis=-1)
        mu = linear(feat, p["enc.mu.w"], p["enc.mu.b"])
        logvar = linear(feat, p["enc.logvar.w"], p["enc.logvar.b"])
        return mu, logvar

    def decode(self, z, mode_hint):
        """``(traj_recon, mode_recon)`` from latent codes and mode one-hots."""
        p, cfg = self.params, self.cfg
        z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(z))
        mode_hint = np.atleast_2d(np.asarray(mode_hint, dtype=np.float64))
        bsz, T = z.shape[0], self.cfg.seq_len
        cond = concat([z, mode_hint], axis=-1)
        h0 = tanh(linear(cond, p["dec.init.w"], p["dec.init.b"]))
        xs = mul(reshape(cond, (bsz, 1, cond.shape[-1])), np.ones((1, T, 1)))
        states = gru_sequence(xs, h0, _gru(p, "dec.gru"))
        # Heading is a direction vector (initial value from the condition plus
        # accumulated turns), normalized to unit length.
        turns = mul(linear(states, p["dec.turn.w"], p["dec.turn.b"]), cfg.turn_scale)
        v0 = linear(cond, p["dec.heading.w"], p["dec.heading.b"])
        direction = cumsum(turns, axis=1) + reshape(v0, (bsz, 1, 2))
        sq = sum_(mul(direction, direction), axis=-1)
        inv_norm = exp(mul(log(sq + 1e-8), -0.5))
        # The speed level comes from the mode alone; z and the recurrent state
        # may only modulate it within a bounded factor.
        log_speed = mul(tanh(linear(states, p["dec.speed.w"], p["dec.speed.b"])),
                        cfg.speed_modulation)
        level = mul(linear(mode_hint, p["dec.gain.w"], p["dec.gain.b"]), cfg.speed_level_rate)
        log_speed = log_speed + reshape(level, (bsz, 1, 1))
        scale = mul(exp(log_speed), reshape(inv_norm, (bsz, T, 1)))
        steps = mul(direction, scale)
        start = linear(cond, p["dec.start.w"], p["dec.start.b"])
        logits = cumsum(steps, axis=1) + reshape(start, (bsz, 1, 2))
        traj = sigmoid(logits)
        mode = softmax(linear(z, p["dec.mode.w"], p["dec.mode.b"]), axis=-1)
        return traj, mode

    def forward(self, batch, rng):
        mu, logvar = self.encode(batch)
        z = reparameterize(mu, logvar, rng)
        traj, mode = self.decode(z, batch.modes)
        return VaeOutput(traj, mode, mu, logvar, z)


def vae_loss(batch, out, cfg, truncate=True):
    """Reconstruction (trajectory MSE + mode cross-entropy) plus KL.

    With ``truncate`` set, a reconstruction MSE strictly above the threshold
    removes the reconstruction terms so only the KL term is optimized (per
    batch, or per sample with ``truncation_scope="sample"``).
    """
    if not hasattr(batch, "modes"):
        batch = batch_segments([batch])
    thr = cfg.recon_truncation_threshold
    w_r, w_kl = cfg.recon_weight, cfg.kl_weight
    kl = kl_diag_gaussian(out.mu, out.logvar)
    kl_term = kl if w_kl == 1.0 else mul(kl, w_kl)

    if cfg.truncation_scope == "sample":
        mse_v = mse_masked(out.traj_recon, batch.coords, batch.mask, reduction="none")
        ce_v = cross_entropy(out.mode_recon, batch.modes, reduction="none")
        over = mse_v.data > thr if truncate else np.zeros(len(batch), dtype=bool)
        keep = (~over).astype(np.float64) / len(batch)
        ce_keep = keep if cfg.truncation_drops_mode_ce else np.full(len(batch), 1.0 / len(batch))
        recon = mul(mse_v, w_r * keep).sum() + mul(ce_v, ce_keep).sum()
        total = recon + kl_term
        traj_mse, mode_ce = float(mse_v.data.mean()), float(ce_v.data.mean())
        return LossBreakdown(total.item(), traj_mse, mode_ce, kl.item(), bool(over.any()),
                             float(over.mean()), total)

    mse = mse_masked(out.traj_recon, batch.coords, batch.mask)
    ce = cross_entropy(out.mode_recon, batch.modes)
    truncated = bool(truncate and mse.item() > thr)
    if truncated:
        total = kl_term if cfg.truncation_drops_mode_ce else ce + kl_term
    else:
        total = (mse if w_r == 1.0 else mul(mse, w_r)) + ce + kl_term
    return LossBreakdown(total.item(), mse.item(), ce.item(), kl.item(), truncated,
                         float(truncated), total)


@dataclass
class LocalState:
    """Per-client optimizer state that survives between federated rounds."""

    adam: AdamState
    armed: bool = False


class _Arrays:
    def __init__(self, segments):
        b = batch_segments(segments)
        self.coords, self.mask, self.modes = b.coords, b.mask, b.modes

    def take(self, idx):
        return SegmentBatch(self.coords[idx], self.mask[idx], self.modes[idx])


def _mean_breakdown(rows, weights):
    w = np.asarray(weights, dtype=np.float64) / np.sum(weights)
    fields = ("total", "traj_mse", "mode_ce", "kl")
    vals = {f: float(sum(wi * getattr(r, f) for wi, r in zip(w, rows))) for f in fields}
    frac = float(sum(wi * r.truncated_fraction for wi, r in zip(w, rows)))
    return LossBreakdown(vals["total"], vals["traj_mse"], vals["mode_ce"], vals["kl"],
                         frac > 0.0, frac)


def train_local(model, dataset, epochs, seed, *, start_epoch=0, state=None,
                early_stopping=True, batch_size=None):
    """Mini-batch Adam on the negative ELBO.

    Randomness for epoch ``e`` (shuffling and reparameterization noise) comes
    from ``stream(seed, "epoch", start_epoch + e)``, so splitting a run into
    consecutive calls with a carried ``state`` reproduces one long call.
    Returns ``(params, history)`` with one mean LossBreakdown per epoch.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDataset("train_local needs at least one segment")
    cfg = model.cfg
    bs = batch_size or cfg.batch_size
    if state is None:
        state = LocalState(AdamState(lr=cfg.lr))
    if cfg.truncation == "always":
        state.armed = True
    schedule = cfg.schedule()
    arrays = _Arrays(dataset)
    params = model.params
    history = []
    ema, stall = None, 0
    for e in range(epochs):
        epoch = start_epoch + e
        rng = stream(seed, "epoch", epoch)
        order = rng.permutation(len(dataset))
        rows, sizes = [], []
        for lo in range(0, len(order), bs):
            batch = arrays.take(order[lo:lo + bs])
            params.zero_grad()
            out = model.forward(batch, rng)
            lb = vae_loss(batch, out, cfg, truncate=state.armed and cfg.truncation != "off")
            lb.tensor.backward()
            lb.tensor = None
            clip_grad_norm(params, cfg.grad_clip)
            adam_step(params, state.adam, lr=schedule(epoch))
            rows.append(lb)
            sizes.append(len(batch))
        summary = _mean_breakdown(rows, sizes)
        history.append(summary)
        if cfg.truncation == "armed" and summary.traj_mse <= cfg.recon_truncation_threshold:
            state.armed = True
        if early_stopping:
            prev = ema
            ema = summary.total if ema is None else cfg.ema_alpha * summary.total + (1 - cfg.ema_alpha) * ema
            if prev is not None and prev - ema < cfg.min_delta:
                stall += 1
                if stall >= cfg.patience:
                    break
            else:
                stall = 0
    return params, history


def generate(model, n, mode, seed, user_id="fedvae-gen"):
    """Decode ``n`` draws from the prior into full-length segments of ``mode``."""
    if n <= 0:
        return []
    mode = TravelMode(mode)
    cfg = model.cfg
    z = standard_normal(stream(seed, "generate", mode.value), (n, cfg.latent_dim))
    hint = np.tile(mode.onehot(), (n, 1))
    with no_grad():
        traj, _ = model.decode(Tensor(z), hint)
    coords = np.clip(traj.data, 0.0, 1.0)
    return [make_segment(coords[i], mode, user_id, seg_id=f"gen:{mode.value}:{seed}:{i}",
                         seq_len=cfg.seq_len)
            for i in range(n)]


def generate_like(model, reference, seed, per_mode=None):
    """Generate a release with the same per-mode counts as ``reference``."""
    counts = {m: 0 for m in MODES}
    for s in reference:
        counts[s.mode] += 1
    out = []
    for m in MODES:
        n = counts[m] if per_mode is None else per_mode
        out.extend(generate(model, n, m, seed))
    return out
