"""Scalar loss functions used by the VAE and the MLP classifier."""

import numpy as np

from ..errors import AllMasked, ShapeMismatch
from .tensor import Tensor, _as_tensor

__all__ = ["mse_masked", "cross_entropy", "kl_diag_gaussian"]


def mse_masked(pred, target, mask, reduction="mean"):
    """Squared error over valid steps.

    ``pred`` and ``target`` are (B, T, F); ``mask`` is (B, T) with 1 for valid
    steps. Per sample, squared error is summed over steps and features and
    divided by the number of valid steps, so the value is the mean squared
    point displacement. ``reduction="mean"`` averages over the batch,
    ``"none"`` returns the per-sample vector.
    """
    pred = _as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_masked: pred {pred.shape} vs target {target.shape}")
    if mask.shape != pred.shape[:2]:
        raise ShapeMismatch(f"mse_masked: mask {mask.shape} vs pred {pred.shape}")
    counts = mask.sum(axis=1)
    if np.any(counts <= 0):
        raise AllMasked("a sample has no valid steps")
    diff = (pred.data - target) * mask[:, :, None]
    per_sample = (diff * diff).sum(axis=(1, 2)) / counts
    bsz = pred.shape[0]

    if reduction == "none":
        def backward(g):
            return (2.0 * diff * (g / counts)[:, None, None],)
        return Tensor._result(per_sample, (pred,), backward, "mse_masked")

    def backward(g):
        return (2.0 * diff * (float(g) / (bsz * counts))[:, None, None],)

    return Tensor._result(np.asarray(per_sample.mean()), (pred,), backward, "mse_masked")


def cross_entropy(probs, onehot, reduction="mean", floor=1e-300):
    """``-sum(onehot * log(probs))`` per sample, averaged over the batch."""
    probs = _as_tensor(probs)
    onehot = np.asarray(onehot, dtype=np.float64)
    if probs.shape != onehot.shape:
        raise ShapeMismatch(f"cross_entropy: {probs.shape} vs {onehot.shape}")
    p = np.maximum(probs.data, floor)
    per_sample = -(onehot * np.log(p)).sum(axis=-1)
    bsz = probs.shape[0]
    if reduction == "none":
        def backward(g):
            return (-onehot / p * g[:, None],)
        return Tensor._result(per_sample, (probs,), backward, "cross_entropy")

    def backward(g):
        return (-onehot / p * (float(g) / bsz),)

    return Tensor._result(np.asarray(per_sample.mean()), (probs,), backward, "cross_entropy")


def kl_diag_gaussian(mu, logvar, reduction="mean"):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dims."""
    mu, logvar = _as_tensor(mu), _as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ShapeMismatch(f"kl_diag_gaussian: {mu.shape} vs {logvar.shape}")
    # expm1(lv) - lv is never negative in floating point; exp(lv) - 1 - lv can be
    var_m1 = np.expm1(logvar.data)
    per_sample = 0.5 * (mu.data ** 2 + (var_m1 - logvar.data)).sum(axis=-1)
    bsz = mu.shape[0] if mu.ndim > 1 else 1

    if reduction == "none":
        def backward(g):
            g = g[..., None]
            return mu.data * g, 0.5 * var_m1 * g
        return Tensor._result(per_sample, (mu, logvar), backward, "kl")

    def backward(g):
        scale = float(g) / bsz
        return mu.data * scale, 0.5 * var_m1 * scale

    return Tensor._result(np.asarray(per_sample.mean()), (mu, logvar), backward, "kl")
