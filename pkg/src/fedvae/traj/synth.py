"""Deterministic synthetic GPS trajectories with mode-dependent kinematics.

Each mode has its own cruising speed band and turning behaviour. Heading
follows an integrated AR(1) turn rate and speed an AR(1) multiplicative
jitter, so paths are smooth curves rather than white-noise zigzags. Subway
runs are almost straight.
"""

from dataclasses import dataclass

import numpy as np

from ..nn.rng import stream
from .segments import CADENCE_S, segment_trajectory
from .types import BEIJING, MODES, SEQ_LEN, GpsPoint, Trajectory, TravelMode


@dataclass(frozen=True)
class ModeProfile:
    speed_kmh: float
    speed_spread: float   # per-trajectory speed drawn from speed_kmh * (1 +- spread)
    speed_jitter: float   # step-to-step relative speed noise (stationary std)
    turn_std: float       # stationary std of the turn rate, rad per step


PROFILES = {
    TravelMode.WALKING: ModeProfile(5.0, 0.12, 0.10, 0.012),
    TravelMode.BIKING: ModeProfile(15.0, 0.12, 0.08, 0.008),
    TravelMode.BUS: ModeProfile(30.0, 0.12, 0.10, 0.005),
    TravelMode.CAR: ModeProfile(60.0, 0.12, 0.08, 0.004),
    TravelMode.SUBWAY: ModeProfile(40.0, 0.10, 0.03, 0.0006),
}

_RHO = 0.9
_EPOCH0 = 1_230_768_000  # 2009-01-01T00:00:00Z


def _path(rng, start, n_points, profile, km_per_unit, cadence_s):
    kx, ky = km_per_unit
    v0 = profile.speed_kmh * (1.0 + profile.speed_spread * rng.uniform(-1.0, 1.0))
    heading = rng.uniform(0.0, 2.0 * np.pi)
    innov = np.sqrt(1.0 - _RHO ** 2)
    omega = rng.normal(0.0, profile.turn_std)
    jitter = rng.normal(0.0, profile.speed_jitter)
    noise = rng.normal(0.0, 1.0, size=(n_points, 2))
    pos = np.array(start, dtype=np.float64)
    out = np.empty((n_points, 2))
    out[0] = pos
    for i in range(1, n_points):
        omega = _RHO * omega + innov * profile.turn_std * noise[i, 0]
        jitter = _RHO * jitter + innov * profile.speed_jitter * noise[i, 1]
        heading += omega
        step_km = max(v0 * (1.0 + jitter), 0.0) * cadence_s / 3600.0
        dx, dy = step_km * np.cos(heading) / kx, step_km * np.sin(heading) / ky
        if not 0.01 <= pos[0] + dx <= 0.99:
            heading = np.pi - heading
            dx = -dx
        if not 0.01 <= pos[1] + dy <= 0.99:
            heading = -heading
            dy = -dy
        pos = np.clip(pos + (dx, dy), 0.0, 1.0)
        out[i] = pos
    return out


def synth_trajectories(n_users, segs_per_user, seed, spec=BEIJING, seq_len=SEQ_LEN,
                       cadence_s=CADENCE_S):
    """Labeled trajectories whose lengths are whole multiples of ``seq_len``.

    Every user gets exactly ``segs_per_user`` segments' worth of points, split
    into trajectories of one to three segments. Returns ``(trajectories, ids)``.
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    km = spec.km_per_unit
    trajectories, ids = [], []
    for u in range(n_users):
        rng = stream(seed, "synth-user", u)
        user_id = f"u{u:03d}"
        home = rng.uniform(0.2, 0.8, size=2)
        prefs = rng.dirichlet(np.full(len(MODES), 2.0))
        remaining, k, t0 = segs_per_user, 0, _EPOCH0 + u * 86400 * 365
        while remaining > 0:
            n_segs = min(remaining, int(rng.integers(1, 4)))
            mode = MODES[int(rng.choice(len(MODES), p=prefs))]
            start = np.clip(home + rng.normal(0.0, 0.12, size=2), 0.05, 0.95)
            unit = _path(rng, start, n_segs * seq_len, PROFILES[mode], km, cadence_s)
            latlon = spec.denormalize(unit)
            points = [GpsPoint(float(lat), float(lon), t0 + i * cadence_s)
                      for i, (lat, lon) in enumerate(latlon)]
            trajectories.append(Trajectory(points, user_id, mode))
            ids.append(f"{user_id}/t{k:04d}")
            t0 += len(points) * cadence_s + 3600
            remaining -= n_segs
            k += 1
    return trajectories, ids


def synth_dataset(n_users, segs_per_user, seed, spec=BEIJING, seq_len=SEQ_LEN):
    """Synthetic segments plus the normalization box they live in."""
    trajectories, ids = synth_trajectories(n_users, segs_per_user, seed, spec, seq_len)
    segments = []
    for traj, tid in zip(trajectories, ids):
        segments.extend(segment_trajectory(traj, spec, seq_len=seq_len, traj_id=tid))
    return segments, spec
