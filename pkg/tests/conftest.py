from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedvae.nn import Tensor
from fedvae.traj import synth_dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b, floor=1e-4):
    """Worst element-wise relative error; ``floor`` keeps near-zero entries from dominating."""
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def check_op(build, arrays, tol=1e-4, seed=0):
    """Compare the autodiff gradient of ``sum(w * build(*tensors))`` with finite differences.

    ``w`` is a fixed random weighting so every output element matters.
    Returns the worst relative error.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = build(*[Tensor(a) for a in arrays]).data
    w = np.random.default_rng(seed).normal(size=probe.shape)

    def scalar(*arrs):
        return float(np.sum(w * build(*[Tensor(a) for a in arrs]).data))

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward(w)
    expected = numeric_grad(scalar, arrays)
    worst = 0.0
    for t, e in zip(tensors, expected):
        got = t.grad if t.grad is not None else np.zeros_like(e)
        worst = max(worst, rel_error(got, e))
    assert worst < tol, worst
    return worst


@pytest.fixture(scope="session")
def small_synth():
    segments, spec = synth_dataset(5, 10, 7)
    return segments, spec
