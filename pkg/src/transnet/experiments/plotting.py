import os
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_learning_curves(histories: Dict[str, Sequence[pd.DataFrame]], path: str, column: str = "test_acc") -> str:
    """One line per (run, seed) of `column` against the epoch; runs share a colour."""
    fig, ax = plt.subplots(figsize=(6, 4))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (label, frames) in enumerate(histories.items()):
        for k, frame in enumerate(frames):
            if column not in frame:
                continue
            ax.plot(frame["epoch"], frame[column], color=colors[i % len(colors)], alpha=0.8, label=label if k == 0 else None)
    ax.set_xlabel("epoch")
    ax.set_ylabel(column.replace("_", " "))
    ax.legend()
    return _save(fig, path)


def plot_ensemble_curves(curves: Dict[str, np.ndarray], path: str) -> str:
    """Accuracy against the number of instances processed at prediction time."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        ax.plot(np.arange(1, len(curve) + 1), curve, marker="o", label=label)
    ax.set_xlabel("instances processed")
    ax.set_ylabel("test accuracy")
    ax.legend()
    return _save(fig, path)


def plot_score_distributions(scores: Dict[str, List[np.ndarray]], path: str, ylabel: str = "invariance score") -> str:
    """Violins of the pooled last-layer scores of each run."""
    labels = list(scores)
    data = [np.concatenate(scores[label]) if scores[label] else np.zeros(1) for label in labels]
    fig, ax = plt.subplots(figsize=(max(4, 1.5 * len(labels)), 4))
    if all(np.ptp(d) > 1e-12 for d in data):
        ax.violinplot(data, showmeans=True)
    else:
        ax.boxplot(data)
    ax.set_xticks(range(1, len(labels) + 1))
    ax.set_xticklabels(labels)
    ax.set_ylabel(ylabel)
    return _save(fig, path)
