from transnet.invariance.score import (
    brute_force_projection,
    group_label,
    invariance_score,
    invariant_basis,
    resolve_group,
    similarity_score,
)
from transnet.invariance.report import InvarianceReport, LayerScores, kernel_scores, layer_report, plot_report

__all__ = [
    "brute_force_projection",
    "group_label",
    "invariance_score",
    "invariant_basis",
    "resolve_group",
    "similarity_score",
    "InvarianceReport",
    "LayerScores",
    "kernel_scores",
    "layer_report",
    "plot_report",
]
