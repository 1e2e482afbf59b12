"""Static figure rendering for sweep and long-tail reports.

Figures are written as self-contained SVG next to the CSV they plot, so
results can be read offline without rerunning anything.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .dataset import BIN_LABELS  # noqa: E402


def plot_k_sweep(path: str, rows):
    """rows: (k, seed, alignment). One line of per-k means with the
    individual seeds scattered behind it."""
    ks = sorted({k for k, _, _ in rows})
    means = [sum(a for k2, _, a in rows if k2 == k)
             / max(sum(1 for k2, _, _ in rows if k2 == k), 1) for k in ks]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for k, seed, a in rows:
        ax.plot(k, a, "o", color="tab:gray", alpha=0.5, markersize=4)
    ax.plot(ks, means, "o-", color="tab:blue", label="mean over seeds")
    ax.set_xlabel("retrieved pairs k")
    ax.set_ylabel("alignment score (x100)")
    ax.set_title("Alignment vs. number of retrieved pairs")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_longtail_bins(path: str, series):
    """series: {label: {bin: mean}}; grouped bars over the 5 frequency
    bins, one group color per model."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    n = len(series)
    width = 0.8 / max(n, 1)
    for i, (label, by_bin) in enumerate(series.items()):
        xs = [j + i * width for j in range(len(BIN_LABELS))]
        ys = [by_bin.get(b, float("nan")) for b in BIN_LABELS]
        ax.bar(xs, ys, width=width, label=label)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(BIN_LABELS))])
    ax.set_xticklabels(BIN_LABELS, fontsize=8)
    ax.set_xlabel("train-split class frequency bin")
    ax.set_ylabel("mean alignment (x100)")
    ax.set_title("Alignment by class frequency")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
