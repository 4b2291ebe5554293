import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from transnet.invariance.score import GroupLike, group_label, resolve_group, similarity_score
from transnet.models.checkpoint import load_any
from transnet.models.params import ModelParams
from transnet.models.transnet import TransNetModel
from transnet.util.exception_handler import InputError
from transnet.util.types import GroupName, Metric, Tensor

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 50


@dataclass
class LayerScores:
    layer: int
    scores: np.ndarray  # defined scores, in kernel order
    kernel_indices: np.ndarray
    undefined: int = 0

    @property
    def summary(self) -> dict:
        if self.scores.size == 0:
            return {"mean": np.nan, "std": np.nan, "min": np.nan, "max": np.nan}
        return {
            "mean": float(self.scores.mean()),
            "std": float(self.scores.std()),
            "min": float(self.scores.min()),
            "max": float(self.scores.max()),
        }


@dataclass
class InvarianceReport:
    layers: List[LayerScores]
    metric: Metric
    group: str
    normalized: bool = False
    bins: int = HISTOGRAM_BINS
    source: Optional[str] = field(default=None, compare=False)

    def histogram_edges(self) -> np.ndarray:
        """`bins` uniform bins over [min(0, lowest score), highest score]; fixed for every layer of the report."""
        scores = np.concatenate([layer.scores for layer in self.layers]) if self.layers else np.zeros(0)
        upper = float(scores.max()) if scores.size else 0.0
        lower = min(0.0, float(scores.min())) if scores.size else 0.0
        if upper <= lower:
            upper = lower + 1.0
        return np.linspace(lower, upper, self.bins + 1)

    def histogram(self, layer: int) -> np.ndarray:
        counts, _ = np.histogram(self.layers[layer].scores, bins=self.histogram_edges())
        return counts

    def summary(self) -> pd.DataFrame:
        rows = []
        for layer in self.layers:
            rows.append(
                {
                    "layer": layer.layer,
                    "kernels": layer.scores.size + layer.undefined,
                    "undefined": layer.undefined,
                    **layer.summary,
                    "metric": self.metric.value,
                    "group": self.group,
                }
            )
        return pd.DataFrame(rows)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"layer": layer.layer, "kernel_index": int(k), "score": float(s), "metric": self.metric.value, "group": self.group}
            for layer in self.layers
            for k, s in zip(layer.kernel_indices, layer.scores)
        ]
        return pd.DataFrame(rows, columns=["layer", "kernel_index", "score", "metric", "group"])

    def to_csv(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.to_frame().to_csv(path, index=False, encoding="utf-8")

    def relative_reduction(self, baseline: "InvarianceReport") -> np.ndarray:
        """
        Per layer (baseline mean - own mean) / baseline mean; positive when this report is more invariant.

        Layers whose baseline mean is zero (already invariant) report 0.
        """
        if len(baseline.layers) != len(self.layers):
            raise InputError("reports cover a different number of layers")
        base = np.array([layer.summary["mean"] for layer in baseline.layers])
        own = np.array([layer.summary["mean"] for layer in self.layers])
        safe = np.where(base > 0, base, 1.0)
        return np.where(base > 0, (base - own) / safe, 0.0)


def kernel_scores(
    kernels: Tensor,
    group: GroupLike = GroupName.c4,
    metric: Union[Metric, str] = Metric.norm,
    normalized: bool = False,
    layer: int = 0,
) -> LayerScores:
    """One score per output channel of a C_out x C_in x k x k kernel stack."""
    elements = resolve_group(group)
    scores, indices, undefined = [], [], 0
    for k, w in enumerate(np.asarray(kernels, dtype=np.float64)):
        score = similarity_score(w, elements, metric, normalized)
        if score is None:
            undefined += 1
            continue
        scores.append(score)
        indices.append(k)
    if undefined:
        logger.info(f"layer {layer}: {undefined} kernels have an undefined {Metric(getattr(metric, 'value', metric)).value} score")
    return LayerScores(layer, np.array(scores), np.array(indices, dtype=np.int64), undefined)


def layer_report(
    source: Union[str, os.PathLike, TransNetModel, ModelParams],
    group: GroupLike = GroupName.c4,
    metric: Union[Metric, str] = Metric.norm,
    normalized: bool = False,
) -> InvarianceReport:
    """Per-layer, per-kernel scores of a model or of a checkpoint on disk."""
    name = None
    if isinstance(source, (str, os.PathLike)):
        name = os.fspath(source)
        source = load_any(source)
    params = source.params if isinstance(source, TransNetModel) else source
    metric = Metric(getattr(metric, "value", metric))
    group_name = group_label(group)
    layers = [kernel_scores(layer.kernels, group, metric, normalized, i) for i, layer in enumerate(params.conv_layers)]
    return InvarianceReport(layers, metric, group_name, normalized, source=name)


def plot_report(report: InvarianceReport, out_dir: str, prefix: str = "invariance") -> List[str]:
    """SVG violin plot over all layers plus one histogram per layer. Returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    label = f"{report.metric.value} ({report.group}{', normalized' if report.normalized else ''})"

    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(report.layers)), 4))
    data = [layer.scores if layer.scores.size else np.zeros(1) for layer in report.layers]
    if all(np.ptp(d) > 1e-12 for d in data):
        ax.violinplot(data, showmeans=True)
    else:
        # kernel density needs spread; constant layers (e.g. projected kernels) get a box plot
        ax.boxplot(data)
    ax.set_xticks(range(1, len(report.layers) + 1))
    ax.set_xticklabels([f"conv{layer.layer + 1}" for layer in report.layers])
    ax.set_ylabel(label)
    path = os.path.join(out_dir, f"{prefix}_layers.svg")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)

    edges = report.histogram_edges()
    for layer in report.layers:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.hist(layer.scores, bins=edges, color="steelblue")
        ax.set_xlabel(label)
        ax.set_ylabel("kernels")
        ax.set_title(f"conv{layer.layer + 1}")
        path = os.path.join(out_dir, f"{prefix}_conv{layer.layer + 1}.svg")
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
