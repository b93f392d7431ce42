"""Static figures for run reports (written to files; no display needed)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_loss_curve(reports, path):
    """Global loss per round, log scale."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    rounds = [r.round for r in reports]
    ax.plot(rounds, [r.global_loss for r in reports], lw=1.5)
    ax.set_yscale("log")
    ax.set_xlabel("round")
    ax.set_ylabel("global loss")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_trip_lengths(lengths_by_name, path, bins=20):
    """Overlaid trip-length histograms on shared bins."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    values = [np.asarray(v) for v in lengths_by_name.values() if len(v)]
    if values:
        lo = min(v.min() for v in values)
        hi = max(v.max() for v in values)
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
        for name, v in lengths_by_name.items():
            ax.hist(v, bins=edges, histtype="step", density=True, lw=1.5, label=name)
        ax.legend(fontsize=8)
    ax.set_xlabel("trip length (km)")
    ax.set_ylabel("density")
    return _save(fig, path)


def plot_kl_bars(kl_by_name, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(kl_by_name)
    ax.bar(names, [kl_by_name[n] for n in names], color="tab:blue")
    ax.set_ylabel("KL divergence (trip length)")
    return _save(fig, path)


def plot_scalability(rows, path):
    """Fitted rounds per client count; open markers where the cap was hit."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [r["clients"] for r in rows]
    ys = [r["fitted_epochs"] for r in rows]
    ax.plot(xs, ys, "-", color="tab:blue")
    for r in rows:
        face = "tab:blue" if r["converged"] else "none"
        ax.plot(r["clients"], r["fitted_epochs"], "o", mfc=face, mec="tab:blue")
    ax.set_xlabel("clients")
    ax.set_ylabel("fitted rounds")
    return _save(fig, path)
