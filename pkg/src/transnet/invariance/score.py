"""
Invariance Score of convolutional kernels.

IS(w, T) is the distance from w to the subspace of T-invariant kernels. For a
group that distance is reached at the orbit mean, so IS = ||w - mean_t t(w)||.
`brute_force_projection` solves the same least-squares problem directly over an
orthonormal basis of the invariant subspace and serves as an oracle.
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np

from transnet.dihedral.actions import apply_spatial, orbit_mean
from transnet.dihedral.group import TransformationSet, named_group
from transnet.util.exception_handler import InputError, ShapeError
from transnet.util.types import GroupName, Metric, Tensor

logger = logging.getLogger(__name__)

GroupLike = Union[TransformationSet, GroupName, str]


def resolve_group(group: GroupLike) -> TransformationSet:
    if isinstance(group, TransformationSet):
        if not group.is_group:
            raise InputError(f"{group!r} is not a group")
        return group.distinct()
    try:
        return named_group(group)
    except ValueError as e:
        raise InputError(f"unknown group {group!r}, expected one of {[g.value for g in GroupName]}") from e


def group_label(group: GroupLike) -> str:
    if isinstance(group, TransformationSet):
        for name in GroupName:
            if named_group(name) == group.distinct():
                return name.value
        return "+".join(group.distinct().names)
    return str(getattr(group, "value", group)).lower()


def _check_kernel(w: Tensor) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim < 2 or w.shape[-1] != w.shape[-2]:
        raise ShapeError(f"kernel must end in two equal spatial axes, got shape {w.shape}")
    return w


def invariance_score(w: Tensor, group: GroupLike = GroupName.c4, normalized: bool = False) -> float:
    """||w - orbit_mean(T, w)||, optionally divided by ||w|| (0 for a zero kernel)."""
    w = _check_kernel(w)
    score = float(np.linalg.norm(w - orbit_mean(resolve_group(group), w)))
    if normalized:
        norm = float(np.linalg.norm(w))
        return score / norm if norm > 0 else 0.0
    return score


def invariant_basis(shape: Tuple[int, ...], group: GroupLike = GroupName.c4) -> np.ndarray:
    """
    Orthonormal basis of the T-invariant tensors of `shape`, one row per index orbit.

    Each row is the normalized indicator of one orbit of coordinate positions.
    """
    elements = resolve_group(group)
    size = int(np.prod(shape))
    index = np.arange(size, dtype=np.float64).reshape(shape)
    _check_kernel(index)
    # every position is labelled by the smallest flat index in its orbit
    labels = np.min(np.stack([apply_spatial(t, index) for t in elements]), axis=0).astype(np.int64).ravel()
    orbits = np.unique(labels)
    basis = np.zeros((orbits.size, size))
    for row, orbit in enumerate(orbits):
        members = labels == orbit
        basis[row, members] = 1.0 / np.sqrt(members.sum())
    return basis


def brute_force_projection(w: Tensor, group: GroupLike = GroupName.c4) -> np.ndarray:
    """argmin over invariant u of ||w - u||, by projecting onto `invariant_basis`."""
    w = _check_kernel(w)
    basis = invariant_basis(w.shape, group)
    return (basis.T @ (basis @ w.ravel())).reshape(w.shape)


def similarity_score(
    w: Tensor, group: GroupLike = GroupName.c4, metric: Union[Metric, str] = Metric.norm, normalized: bool = False
) -> Optional[float]:
    """
    Similarity between w and its orbit mean.

    norm is the Invariance Score (lower is more invariant); pearson and cosine
    are 1 for invariant kernels. Returns None when the correlation or angle is
    undefined (constant kernel, zero kernel or zero orbit mean).
    """
    metric = Metric(getattr(metric, "value", metric))
    w = _check_kernel(w)
    if metric is Metric.norm:
        return invariance_score(w, group, normalized)
    a = w.ravel()
    b = orbit_mean(resolve_group(group), w).ravel()
    if metric is Metric.cosine:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return None
        return float(a @ b / (na * nb))
    a, b = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return None
    return float(a @ b / (na * nb))
