"""Figures for CLI reports, rendered to files with the Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_filter_curves(rows, path):
    """One panel per alpha, one line per depth, response against lambda."""
    alphas = sorted({r["alpha"] for r in rows})
    fig, axes = plt.subplots(1, len(alphas), figsize=(3.2 * len(alphas), 2.8), squeeze=False, sharey=True)
    for ax, a in zip(axes[0], alphas):
        sel = [r for r in rows if r["alpha"] == a]
        for L in sorted({r["depth"] for r in sel}):
            pts = sorted((r["lambda"], r["response"]) for r in sel if r["depth"] == L)
            lam, resp = zip(*pts)
            ax.plot(lam, resp, label=f"L={L}")
        ax.axhline(0.0, color="0.6", lw=0.8)
        ax.set_title(f"alpha = {a:g}")
        ax.set_xlabel("lambda")
    axes[0][0].set_ylabel("response")
    axes[0][-1].legend()
    return _save(fig, path)


def plot_depth_sweep(rows, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for variant in dict.fromkeys(r["variant"] for r in rows):
        sel = sorted((r["depth"], r["mean"], r["std"]) for r in rows if r["variant"] == variant)
        d, m, s = map(np.array, zip(*sel))
        ax.errorbar(d, m, yerr=s, marker="o", capsize=3, label=variant)
    ax.set_xlabel("depth")
    ax.set_ylabel("test accuracy")
    ax.legend()
    return _save(fig, path)


def plot_ablation(rows, path):
    fig, ax = plt.subplots(figsize=(1.0 + 0.8 * len(rows), 3.2))
    x = np.arange(len(rows))
    ax.bar(x, [r["mean"] for r in rows], yerr=[r["std"] for r in rows], capsize=3, color="0.55")
    ax.set_xticks(x)
    ax.set_xticklabels([r["toggle"] for r in rows], rotation=30, ha="right")
    ax.set_ylabel("test accuracy")
    lo = min(r["mean"] - r["std"] for r in rows)
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    return _save(fig, path)


def plot_history(records, path):
    epochs = [r["epoch"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
    ax1.plot(epochs, [r["train_loss"] for r in records], label="train")
    ax1.plot(epochs, [r["val_loss"] for r in records], label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [r["train_acc"] for r in records], label="train")
    ax2.plot(epochs, [r["val_acc"] for r in records], label="val")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    return _save(fig, path)


def plot_confusion(report, path):
    cm = np.asarray(report["confusion_matrix"] if isinstance(report, dict) else report.confusion_matrix)
    names = report["class_names"] if isinstance(report, dict) else report.class_names
    fig, ax = plt.subplots(figsize=(3.4, 3.0))
    ax.imshow(cm, cmap="Blues")
    for (i, j), v in np.ndenumerate(cm):
        ax.text(j, i, str(v), ha="center", va="center", color="white" if v > cm.max() / 2 else "black")
    ax.set_xticks(range(len(names)))
    ax.set_yticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_yticklabels(names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    return _save(fig, path)
