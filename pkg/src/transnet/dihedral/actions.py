import numpy as np

from transnet.dihedral.group import DihedralElement, TransformationSet, inverse
from transnet.util.exception_handler import InputError, ShapeError
from transnet.util.types import Tensor


def apply_spatial(t: DihedralElement, x: Tensor) -> Tensor:
    """Rotate/reflect the last two axes of x; leading axes are untouched."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError(f"need at least two spatial axes, got shape {x.shape}")
    if x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"spatial dims must be square, got {x.shape[-2]}x{x.shape[-1]}")
    out = np.rot90(x, k=t.rot, axes=(-2, -1))
    if t.flip:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def apply_to_params(t: DihedralElement, params):
    """t(theta): transform every conv kernel spatially; biases and heads stay as they are."""
    if t.is_identity:
        return params
    return params.map_kernels(lambda w: apply_spatial(t, w))


def compile_params(t: DihedralElement, params):
    """t^-1(theta), the weights that absorb an input transform t."""
    return apply_to_params(inverse(t), params)


def _require_group(group: TransformationSet) -> TransformationSet:
    if not group.is_group:
        raise InputError(f"{group!r} is not closed under composition and inverse")
    return group.distinct()


def orbit_mean(group: TransformationSet, w: Tensor) -> Tensor:
    """Mean of t(w) over the group; the nearest group-invariant tensor to w."""
    elements = _require_group(group)
    w = np.asarray(w, dtype=np.float64)
    return np.mean(np.stack([apply_spatial(t, w) for t in elements]), axis=0)


def orbit_mean_params(group: TransformationSet, params):
    """Replace every conv kernel stack by its orbit mean."""
    _require_group(group)
    return params.map_kernels(lambda w: orbit_mean(group, w))


def is_invariant(group: TransformationSet, w: Tensor, atol: float = 0.0) -> bool:
    w = np.asarray(w, dtype=np.float64)
    return all(np.allclose(apply_spatial(t, w), w, rtol=0.0, atol=atol) for t in group)
