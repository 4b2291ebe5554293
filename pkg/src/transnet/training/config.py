import zlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from transnet.dihedral.group import TransformationSet, identity_multiset, rotations_prefix
from transnet.training import TRAIN_CONF
from transnet.util.exception_handler import InputError, ShapeError
from transnet.util.types import HeadAverage, Tensor, TrainingMode


@dataclass
class TrainingConfig:
    batch_size: int = TRAIN_CONF.BATCH_SIZE
    epochs: int = TRAIN_CONF.EPOCHS
    max_iterations: Optional[int] = None  # stops early once this many steps ran
    learning_rate: float = TRAIN_CONF.LEARNING_RATE
    milestones: Tuple[int, ...] = TRAIN_CONF.MILESTONES
    lr_decay: float = TRAIN_CONF.LR_DECAY
    momentum: float = TRAIN_CONF.MOMENTUM
    weight_decay: float = TRAIN_CONF.WEIGHT_DECAY
    decay_biases: bool = TRAIN_CONF.DECAY_BIASES
    seed: int = TRAIN_CONF.SEED
    mode: TrainingMode = TrainingMode.transnet
    num_heads: int = TRAIN_CONF.NUM_HEADS
    transforms: Optional[TransformationSet] = None  # overrides the per-mode default
    flip_prob: float = TRAIN_CONF.FLIP_PROB
    pad_crop: int = TRAIN_CONF.PAD_CROP
    flip_average_eval: bool = TRAIN_CONF.FLIP_AVERAGE_EVAL
    head_average: HeadAverage = HeadAverage.logits
    eval_batch_size: int = TRAIN_CONF.EVAL_BATCH_SIZE

    def __post_init__(self):
        self.mode = TrainingMode.parse(self.mode)
        self.head_average = HeadAverage(getattr(self.head_average, "value", self.head_average))
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.transforms is not None and not isinstance(self.transforms, TransformationSet):
            self.transforms = TransformationSet(self.transforms)
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or (self.max_iterations is not None and self.max_iterations < 0):
            raise InputError("epochs and max_iterations must be non-negative")
        if not self.learning_rate > 0:
            raise InputError(f"learning_rate must be > 0, got {self.learning_rate}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise InputError(f"milestones must be strictly increasing, got {self.milestones}")
        if not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0:
            raise InputError("momentum must be in [0, 1) and weight_decay non-negative")
        if not 0.0 <= self.flip_prob <= 1.0 or self.pad_crop < 0:
            raise InputError("flip_prob must be in [0, 1] and pad_crop non-negative")
        if self.num_heads < 1:
            raise InputError(f"num_heads must be >= 1, got {self.num_heads}")

    @property
    def train_transforms(self) -> TransformationSet:
        """Transforms the training loss averages over (one per loss term)."""
        if self.mode is TrainingMode.base:
            return TransformationSet(["r0"])
        if self.transforms is not None:
            return self.transforms
        if self.mode is TrainingMode.arch_only:
            return identity_multiset(self.num_heads)
        return rotations_prefix(self.num_heads)

    @property
    def model_transforms(self) -> TransformationSet:
        """Transforms attached to the model's heads."""
        if self.mode in (TrainingMode.base, TrainingMode.single_head):
            return TransformationSet(["r0"])
        return self.train_transforms

    @property
    def head_map(self) -> List[int]:
        """Head index used by each training transform."""
        if self.mode is TrainingMode.single_head:
            return [0] * len(self.train_transforms)
        return list(range(len(self.train_transforms)))

    @property
    def label(self) -> str:
        m = len(self.train_transforms)
        return {
            TrainingMode.base: "base",
            TrainingMode.transnet: f"T{m}",
            TrainingMode.single_head: f"alg-only{m}",
            TrainingMode.arch_only: f"arch-only{m}",
        }[self.mode]


@dataclass
class Batch:
    inputs: Tensor  # b x C x H x W
    labels: np.ndarray  # b class indices

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 4:
            raise ShapeError(f"batch inputs must be b x C x H x W, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError(f"expected {self.inputs.shape[0]} labels, got shape {self.labels.shape}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def check_labels(self, num_classes: int) -> None:
        if np.any(self.labels < 0) or np.any(self.labels >= num_classes):
            raise InputError(f"labels must lie in [0, {num_classes})")

    def take(self, indices: Sequence[int]) -> "Batch":
        indices = np.asarray(indices)
        return Batch(self.inputs[indices], self.labels[indices])


def seed_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named consumer (init, shuffle, augment, ...) of a root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
