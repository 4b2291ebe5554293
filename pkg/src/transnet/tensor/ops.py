"""
Differentiable primitives the model is assembled from.

Every function is pure: inputs are never modified and results are fresh float64
arrays. Spatial operations accept a single map (C x H x W) or a batch
(N x C x H x W); the batch axis is carried through untouched. Backward functions
take the forward inputs plus the upstream gradient and return exact gradients.

Convolution is cross-correlation with stride 1 and an odd square kernel. With
`padding="same"` the output keeps the input's spatial size, which together with
2x2 mean pooling and GAP keeps every stage commuting with the dihedral group.
"""

import logging
from typing import Callable, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from transnet.util.exception_handler import InputError, ShapeError
from transnet.util.types import Padding, Tensor

logger = logging.getLogger(__name__)


def as_tensor(x) -> Tensor:
    return np.ascontiguousarray(x, dtype=np.float64)


def _batched(x: Tensor, name: str = "input") -> Tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 3:
        return x[np.newaxis], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{name} must be C x H x W or N x C x H x W, got shape {x.shape}")


def _unbatch(x: Tensor, squeeze: bool) -> Tensor:
    return x[0] if squeeze else x


def _check_square(x: Tensor, name: str = "input") -> None:
    if x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"{name} spatial dims must be square, got {x.shape[-2]}x{x.shape[-1]}")


def _pad_width(kernel_size: int, padding: Union[str, Padding]) -> int:
    padding = Padding(padding)
    return (kernel_size - 1) // 2 if padding is Padding.same else 0


def _check_conv(x4: Tensor, kernels: Tensor) -> None:
    _check_square(x4)
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be C_out x C_in x k x k, got shape {kernels.shape}")
    k = kernels.shape[-1]
    if kernels.shape[-2] != k or k % 2 == 0:
        raise ShapeError(f"kernel spatial dims must be odd and equal, got {kernels.shape[-2]}x{k}")
    if kernels.shape[1] != x4.shape[1]:
        raise ShapeError(f"input has {x4.shape[1]} channels but kernels expect {kernels.shape[1]}")


def conv2d_output_size(size: int, kernel_size: int, padding: Union[str, Padding] = Padding.same) -> int:
    return size + 2 * _pad_width(kernel_size, padding) - kernel_size + 1


def conv2d_forward(input: Tensor, kernels: Tensor, bias: Tensor, padding: Union[str, Padding] = Padding.same) -> Tensor:
    """Cross-correlation of `input` with every output-channel kernel, plus bias."""
    x4, squeeze = _batched(input)
    kernels = as_tensor(kernels)
    bias = as_tensor(bias)
    _check_conv(x4, kernels)
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"bias must have shape ({kernels.shape[0]},), got {bias.shape}")

    k = kernels.shape[-1]
    p = _pad_width(k, padding)
    if x4.shape[-1] + 2 * p < k:
        raise ShapeError(f"input of size {x4.shape[-1]} is smaller than the {k}x{k} kernel")
    xp = np.pad(x4, ((0, 0), (0, 0), (p, p), (p, p))) if p else x4
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))  # N x C x Ho x Wo x k x k
    out = np.tensordot(windows, kernels, axes=([1, 4, 5], [1, 2, 3]))  # N x Ho x Wo x O
    out = out.transpose(0, 3, 1, 2) + bias[np.newaxis, :, np.newaxis, np.newaxis]
    return _unbatch(np.ascontiguousarray(out), squeeze)


def conv2d_backward(
    input: Tensor, kernels: Tensor, grad_out: Tensor, padding: Union[str, Padding] = Padding.same
) -> Tuple[Tensor, Tensor, Tensor]:
    """Gradients of conv2d_forward w.r.t. input, kernels and bias."""
    x4, squeeze = _batched(input)
    kernels = as_tensor(kernels)
    g4, _ = _batched(grad_out, "grad_out")
    _check_conv(x4, kernels)

    k = kernels.shape[-1]
    p = _pad_width(k, padding)
    out_size = x4.shape[-1] + 2 * p - k + 1
    expected = (x4.shape[0], kernels.shape[0], out_size, out_size)
    if g4.shape != expected:
        raise ShapeError(f"grad_out must have shape {expected}, got {g4.shape}")

    xp = np.pad(x4, ((0, 0), (0, 0), (p, p), (p, p))) if p else x4
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    grad_kernels = np.tensordot(windows, g4, axes=([0, 2, 3], [0, 2, 3]))  # C x k x k x O
    grad_kernels = np.ascontiguousarray(grad_kernels.transpose(3, 0, 1, 2))
    grad_bias = g4.sum(axis=(0, 2, 3))

    # full correlation of grad_out with the spatially flipped kernels
    q = k - 1 - p
    gp = np.pad(g4, ((0, 0), (0, 0), (q, q), (q, q))) if q else g4
    g_windows = sliding_window_view(gp, (k, k), axis=(2, 3))  # N x O x H x W x k x k
    flipped = kernels[:, :, ::-1, ::-1]
    grad_input = np.tensordot(g_windows, flipped, axes=([1, 4, 5], [0, 2, 3]))  # N x H x W x C
    grad_input = np.ascontiguousarray(grad_input.transpose(0, 3, 1, 2))

    return _unbatch(grad_input, squeeze), grad_kernels, grad_bias


def avgpool2x2_forward(input: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 blocks."""
    x4, squeeze = _batched(input)
    _check_square(x4)
    h = x4.shape[-1]
    if h % 2:
        raise ShapeError(f"2x2 average pooling needs an even spatial size, got {h}")
    n, c = x4.shape[:2]
    out = x4.reshape(n, c, h // 2, 2, h // 2, 2).mean(axis=(3, 5))
    return _unbatch(out, squeeze)


def avgpool2x2_backward(grad_out: Tensor) -> Tensor:
    g4, squeeze = _batched(grad_out, "grad_out")
    grad_input = np.repeat(np.repeat(g4, 2, axis=2), 2, axis=3) * 0.25
    return _unbatch(grad_input, squeeze)


def gap_forward(input: Tensor) -> Tensor:
    """Per-channel spatial mean; C x H x W -> C (or N x C)."""
    x4, squeeze = _batched(input)
    n, c = x4.shape[:2]
    # numpy sums each contiguous row-major map pairwise: a fixed order for a given
    # map size, so results are bitwise reproducible and do not depend on the batch
    # they come in. D4 invariance holds up to rounding.
    out = np.ascontiguousarray(x4).reshape(n, c, -1).mean(axis=2)
    return _unbatch(out, squeeze)


def gap_backward(grad_out: Tensor, spatial_size: int) -> Tensor:
    g = as_tensor(grad_out)
    if g.ndim not in (1, 2):
        raise ShapeError(f"grad_out must be C or N x C, got shape {g.shape}")
    scale = 1.0 / (spatial_size * spatial_size)
    return np.broadcast_to(g[..., np.newaxis, np.newaxis] * scale, g.shape + (spatial_size, spatial_size)).copy()


def fc_forward(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """weight @ input + bias, for a single vector (C) or a batch (N x C)."""
    x = as_tensor(input)
    weight = as_tensor(weight)
    bias = as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input of shape {x.shape} does not fit weight of shape {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias must have shape ({weight.shape[0]},), got {bias.shape}")
    return x @ weight.T + bias


def fc_backward(input: Tensor, weight: Tensor, grad_out: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    x = as_tensor(input)
    weight = as_tensor(weight)
    g = as_tensor(grad_out)
    if g.shape[-1] != weight.shape[0] or g.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"grad_out of shape {g.shape} does not fit weight {weight.shape} and input {x.shape}")
    grad_input = g @ weight
    if g.ndim == 1:
        grad_weight = np.outer(g, x)
        grad_bias = g.copy()
    else:
        grad_weight = g.T @ x
        grad_bias = g.sum(axis=0)
    return grad_input, grad_weight, grad_bias


def relu_forward(input: Tensor) -> Tensor:
    return np.maximum(as_tensor(input), 0.0)


def relu_backward(input: Tensor, grad_out: Tensor) -> Tensor:
    return as_tensor(grad_out) * (as_tensor(input) > 0)


def softmax(logits: Tensor) -> Tensor:
    z = as_tensor(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(values: Tensor, axis: int = -1) -> Tensor:
    """log(sum(exp(values))) along `axis`, shifted by the maximum so it never overflows."""
    v = as_tensor(values)
    top = v.max(axis=axis, keepdims=True)
    return np.squeeze(top, axis=axis) + np.log(np.exp(v - top).sum(axis=axis))


def log_softmax(logits: Tensor) -> Tensor:
    z = as_tensor(logits)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, label) -> Tuple[float, Tensor]:
    """
    Cross-entropy of softmax(logits) against `label`.

    For a K-vector and an int label returns (-log p[label], p - onehot). For a batch
    (N x K logits, N labels) returns the batch mean and the gradient of that mean.
    """
    z = as_tensor(logits)
    labels = np.asarray(label)
    k = z.shape[-1]
    if z.ndim == 1:
        if labels.ndim != 0:
            raise InputError(f"a single logit vector takes a scalar label, got shape {labels.shape}")
    elif z.ndim == 2:
        if labels.shape != (z.shape[0],):
            raise InputError(f"expected {z.shape[0]} labels, got shape {labels.shape}")
    else:
        raise ShapeError(f"logits must be K or N x K, got shape {z.shape}")
    if not np.issubdtype(labels.dtype, np.integer) or np.any(labels < 0) or np.any(labels >= k):
        raise InputError(f"labels must be integers in [0, {k}), got {labels}")

    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)

    if z.ndim == 1:
        loss = float(-log_probs[int(labels)])
        grad = probs
        grad[int(labels)] -= 1.0
        return loss, grad

    n = z.shape[0]
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())
    grad = probs
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def per_sample_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Cross-entropy per row of an N x K logit matrix."""
    z = as_tensor(logits)
    labels = np.asarray(labels)
    return -log_softmax(z)[np.arange(z.shape[0]), labels]


def check_finite(x: Tensor, name: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite values")
    return x


def numerical_gradient(func: Callable[[Tensor], float], x: Tensor, step: float = 1e-5) -> Tensor:
    """Central finite differences of a scalar function at x."""
    x = as_tensor(x).copy()
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x.flat[i]
        x.flat[i] = original + step
        f_plus = func(x)
        x.flat[i] = original - step
        f_minus = func(x)
        x.flat[i] = original
        grad.flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a| + |n|, floor) over coordinates."""
    analytic = as_tensor(analytic)
    numeric = as_tensor(numeric)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
