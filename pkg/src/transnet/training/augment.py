from typing import Optional, Tuple

import numpy as np

from transnet.util.exception_handler import ShapeError
from transnet.util.types import Tensor


def augment(
    x: Tensor,
    rng: np.random.Generator,
    flip_prob: float = 0.5,
    pad_crop: int = 4,
    offset: Optional[Tuple[int, int]] = None,
    flip: Optional[bool] = None,
) -> Tensor:
    """
    Random horizontal flip, then zero-pad by `pad_crop` and crop back to the original size.

    `flip` and `offset` force the random draws (offset (pad_crop, pad_crop) is the centre crop).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise ShapeError(f"augment expects a square C x H x W image, got {x.shape}")
    if flip is None:
        flip = bool(rng.random() < flip_prob)
    if flip:
        x = x[:, :, ::-1]
    if pad_crop:
        size = x.shape[-1]
        if offset is None:
            offset = tuple(int(v) for v in rng.integers(0, 2 * pad_crop + 1, size=2))
        dy, dx = offset
        padded = np.pad(x, ((0, 0), (pad_crop, pad_crop), (pad_crop, pad_crop)))
        x = padded[:, dy : dy + size, dx : dx + size]
    return np.ascontiguousarray(x)


def augment_batch(inputs: Tensor, rng: np.random.Generator, flip_prob: float = 0.5, pad_crop: int = 4) -> Tensor:
    if flip_prob == 0 and pad_crop == 0:
        return np.asarray(inputs, dtype=np.float64)
    return np.stack([augment(x, rng, flip_prob, pad_crop) for x in inputs])
