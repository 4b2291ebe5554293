from typing import List, Optional, Sequence

import numpy as np

from transnet.util.exception_handler import InputError
from transnet.util.types import Tensor


class SGD:
    """
    SGD with momentum and L2 weight decay over a flat list of arrays.

        velocity = momentum * velocity + grad + weight_decay * param
        param   -= lr * velocity

    `decay_mask` switches weight decay off per array (e.g. for biases).
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0, decay_mask: Optional[Sequence[bool]] = None):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_mask = None if decay_mask is None else list(decay_mask)
        self.velocity: Optional[List[Tensor]] = None
        self.steps = 0

    def step(self, params: Sequence[Tensor], grads: Sequence[Tensor], lr: float) -> List[Tensor]:
        """Return the updated arrays; the inputs are left untouched."""
        if len(params) != len(grads):
            raise InputError(f"{len(params)} parameter arrays but {len(grads)} gradients")
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        mask = self.decay_mask if self.decay_mask is not None else [True] * len(params)
        updated = []
        for i, (p, g) in enumerate(zip(params, grads)):
            d = g + self.weight_decay * p if mask[i] else g
            self.velocity[i] = self.momentum * self.velocity[i] + d
            updated.append(p - lr * self.velocity[i])
        self.steps += 1
        return updated

    def state_dict(self) -> dict:
        return {"velocity": [v.copy() for v in self.velocity or []], "steps": self.steps}


class StepLR:
    """Learning rate multiplied by `decay` at each milestone epoch."""

    def __init__(self, base_lr: float, milestones: Sequence[int] = (), decay: float = 0.1):
        self.base_lr = base_lr
        self.milestones = tuple(milestones)
        self.decay = decay

    def lr_at(self, epoch: int) -> float:
        passed = sum(1 for m in self.milestones if epoch >= m)
        return self.base_lr * self.decay**passed
