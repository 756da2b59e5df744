"""Figure and table emitters for training runs and ablation sweeps."""

import csv

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_history(history, path, dpi=100):
    """Training loss and validation accuracy over epochs, stages marked."""
    plt = _plt()
    steps = np.arange(1, len(history) + 1)
    loss = [row["loss"] for row in history]
    acc = [row["val_acc"] for row in history]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(steps, loss, color="tab:red", label="train loss")
    ax1.set_xlabel("epoch (stages concatenated)")
    ax1.set_ylabel("loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(steps, acc, color="tab:blue", label="val accuracy")
    ax2.set_ylabel("val accuracy", color="tab:blue")
    ax2.set_ylim(0.0, 1.0)
    boundaries = [i for i in range(1, len(history)) if history[i]["stage"] != history[i - 1]["stage"]]
    for b in boundaries:
        ax1.axvline(b + 0.5, color="gray", linestyle="--", linewidth=1)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def write_ablation_csv(results, path):
    tags = sorted({tag for row in results for tag in row["median_per_tag"]})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "median_accuracy"] + [f"median_{t}" for t in tags])
        for row in results:
            writer.writerow([row["variant"], row["median_accuracy"]]
                            + [row["median_per_tag"].get(t, "") for t in tags])


def plot_ablation(results, path, dpi=100):
    """Horizontal bar chart of median accuracy per variant."""
    plt = _plt()
    names = [row["variant"] for row in results]
    accs = [row["median_accuracy"] for row in results]
    fig, ax = plt.subplots(figsize=(7, 0.4 * len(names) + 1.5))
    y = np.arange(len(names))
    ax.barh(y, accs, color="tab:blue")
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("median accuracy")
    ax.set_xlim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
