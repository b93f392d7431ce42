"""Adam with bias correction, a step learning-rate schedule, and norm clipping."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import MissingGradient, SchemaMismatch

__all__ = ["AdamState", "StepSchedule", "adam_step", "clip_grad_norm"]


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self):
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


@dataclass(frozen=True)
class StepSchedule:
    """``initial`` until ``boundary`` epochs have finished, ``decayed`` afterwards."""

    initial: float = 0.01
    decayed: float = 0.001
    boundary: int = 500

    def __call__(self, epoch):
        return self.initial if epoch < self.boundary else self.decayed


def clip_grad_norm(params, max_norm):
    """Rescale all gradients in place so their global L2 norm is <= max_norm."""
    total = 0.0
    for name, t in params.items():
        if t.grad is None:
            raise MissingGradient(f"parameter {name!r} has no gradient")
        total += float(np.sum(t.grad * t.grad))
    norm = np.sqrt(total)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for t in params.values():
            t.grad = t.grad * scale
    return norm


def adam_step(params, state, lr=None):
    """Apply one Adam update to ``params`` (rebinding, not mutating, arrays)."""
    if lr is not None:
        state.lr = lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        if t.grad is None:
            raise MissingGradient(f"parameter {name!r} has no gradient")
        g = t.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        elif m.shape != t.data.shape:
            raise SchemaMismatch(f"optimizer moment shape mismatch for {name!r}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        t.data = t.data - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params
