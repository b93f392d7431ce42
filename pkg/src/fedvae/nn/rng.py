"""Named, counter-based random streams.

All randomness is drawn from Philox generators keyed by a root seed plus a
path of names/integers, e.g. ``stream(seed, "client", 3, "epoch", 12)``. The
same key path always yields the same stream, independent of call order, which
is what makes federated rounds replayable and resumable.
"""

import zlib

import numpy as np

__all__ = ["stream", "derive_seed", "standard_normal"]


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *path):
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed, *path):
    """A 32-bit integer seed derived from ``seed`` and a key path."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return int(seq.generate_state(1)[0])


def standard_normal(rng, shape):
    """Box-Muller standard normals from ``rng``'s uniforms."""
    shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
    return z.reshape(shape)
