"""
Dataset ingestion.

CIFAR binary files hold fixed-size records: one label byte followed by the
image as channel-major uint8 planes (R, G, B), each plane row-major. Images are
scaled to [0, 1] and then standardized per channel with statistics of the
training split only.
"""

import glob
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np

from transnet.dihedral.actions import apply_spatial
from transnet.dihedral.group import element_from_name
from transnet.experiments import EXPERIMENT_CONF
from transnet.training.config import Batch, seed_stream
from transnet.util.exception_handler import FormatError, InputError
from transnet.util.types import Tensor

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


@dataclass
class Dataset:
    name: str
    train: Batch
    test: Batch
    num_classes: int
    metadata: Dict = field(default_factory=dict)
    channel_mean: Optional[np.ndarray] = None
    channel_std: Optional[np.ndarray] = None

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.train.inputs.shape[1:])

    def __repr__(self):
        return f"Dataset({self.name!r}, train={len(self.train)}, test={len(self.test)}, classes={self.num_classes}, shape={self.image_shape})"


def record_bytes(channels: int = EXPERIMENT_CONF.CHANNELS, image_size: int = EXPERIMENT_CONF.IMAGE_SIZE) -> int:
    return EXPERIMENT_CONF.LABEL_BYTES + channels * image_size * image_size


def read_cifar_records(
    path: PathLike,
    num_classes: int = EXPERIMENT_CONF.NUM_CLASSES,
    channels: int = EXPERIMENT_CONF.CHANNELS,
    image_size: int = EXPERIMENT_CONF.IMAGE_SIZE,
) -> Tuple[Tensor, np.ndarray]:
    """Images in [0, 1] (N x C x H x W) and labels of one CIFAR binary file."""
    size = record_bytes(channels, image_size)
    with open(path, "rb") as f:
        data = f.read()
    if not data:
        raise FormatError(f"{path} is empty")
    if len(data) % size:
        raise FormatError(f"{path} holds {len(data)} bytes, not a whole number of {size}-byte records")
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, size)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= num_classes:
        raise FormatError(f"{path} contains label {labels.max()} but only {num_classes} classes are expected")
    images = records[:, 1:].reshape(-1, channels, image_size, image_size).astype(np.float64) / 255.0
    return images, labels


def write_cifar_binary(path: PathLike, inputs: Tensor, labels) -> None:
    """Write images in [0, 1] (or uint8) and labels as CIFAR binary records."""
    inputs = np.asarray(inputs)
    labels = np.asarray(labels)
    if inputs.ndim != 4 or labels.shape != (inputs.shape[0],):
        raise InputError(f"expected N x C x H x W images and N labels, got {inputs.shape} and {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise InputError("labels must fit in one byte")
    if inputs.dtype != np.uint8:
        inputs = np.clip(np.rint(inputs * 255.0), 0, 255).astype(np.uint8)
    records = np.concatenate([labels.astype(np.uint8)[:, None], inputs.reshape(len(labels), -1)], axis=1)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(records.tobytes())


def stratified_subsample(labels, n: int, rng: Union[np.random.Generator, int, None] = None) -> np.ndarray:
    """
    Sorted indices of an n-sample subset with (as far as n allows) equal counts per class.

    The remainder of n over the class count goes to the lowest class labels.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if n < 1 or n > labels.size:
        raise InputError(f"cannot draw {n} samples from {labels.size}")
    rng = np.random.default_rng(rng)
    quota, extra = divmod(n, classes.size)
    picked = []
    for i, c in enumerate(classes):
        members = np.flatnonzero(labels == c)
        want = quota + (1 if i < extra else 0)
        if want > members.size:
            raise InputError(f"class {c} has {members.size} samples, {want} requested")
        picked.append(rng.choice(members, size=want, replace=False))
    return np.sort(np.concatenate(picked))


def channel_statistics(inputs: Tensor) -> Tuple[np.ndarray, np.ndarray]:
    mean = inputs.mean(axis=(0, 2, 3))
    std = inputs.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def normalize(dataset: Dataset) -> Dataset:
    """Standardize both splits per channel with the training split's mean and std."""
    mean, std = channel_statistics(dataset.train.inputs)

    def apply(batch: Batch) -> Batch:
        return Batch((batch.inputs - mean[:, None, None]) / std[:, None, None], batch.labels)

    return Dataset(
        dataset.name, apply(dataset.train), apply(dataset.test), dataset.num_classes, dataset.metadata, mean, std
    )


def load_cifar_binary(
    path: PathLike,
    num_classes: int = EXPERIMENT_CONF.NUM_CLASSES,
    subsample: Optional[int] = None,
    test_subsample: Optional[int] = None,
    seed: int = 0,
    channels: int = EXPERIMENT_CONF.CHANNELS,
    image_size: int = EXPERIMENT_CONF.IMAGE_SIZE,
    standardize: bool = True,
) -> Dataset:
    """
    Load a CIFAR-format directory (data_batch_*.bin + test_batch.bin) or a single file.

    A single file becomes the training split with an empty test split. Subsamples
    are stratified by class and drawn from the "data" stream of `seed`.
    """
    path = os.fspath(path)
    if os.path.isdir(path):
        train_files = sorted(glob.glob(os.path.join(path, EXPERIMENT_CONF.TRAIN_FILES)))
        test_file = os.path.join(path, EXPERIMENT_CONF.TEST_FILE)
        if not train_files:
            raise FormatError(f"no {EXPERIMENT_CONF.TRAIN_FILES} files in {path}")
    elif os.path.isfile(path):
        train_files, test_file = [path], None
    else:
        raise InputError(f"{path} does not exist")

    parts = [read_cifar_records(f, num_classes, channels, image_size) for f in train_files]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    if test_file is not None and os.path.exists(test_file):
        test_x, test_y = read_cifar_records(test_file, num_classes, channels, image_size)
    else:
        test_x = np.zeros((0, channels, image_size, image_size))
        test_y = np.zeros(0, dtype=np.int64)

    rng = seed_stream(seed, "data")
    if subsample is not None and subsample < len(train_y):
        idx = stratified_subsample(train_y, subsample, rng)
        train_x, train_y = train_x[idx], train_y[idx]
    if test_subsample is not None and test_subsample < len(test_y):
        idx = stratified_subsample(test_y, test_subsample, rng)
        test_x, test_y = test_x[idx], test_y[idx]

    dataset = Dataset(os.path.basename(os.path.normpath(path)), Batch(train_x, train_y), Batch(test_x, test_y), num_classes)
    logger.info(f"loaded {dataset!r}")
    return normalize(dataset) if standardize else dataset


def _synthetic_split(prototype, n: int, t, rng: np.random.Generator, noise: float, variation: float):
    pairs = n // 2
    base = prototype + variation * rng.standard_normal((pairs,) + prototype.shape)
    class_a = np.clip(base + noise * rng.standard_normal(base.shape), 0.0, 1.0)
    class_b = np.clip(apply_spatial(t, base) + noise * rng.standard_normal(base.shape), 0.0, 1.0)
    inputs = np.empty((2 * pairs,) + prototype.shape)
    inputs[0::2], inputs[1::2] = class_a, class_b
    labels = np.tile(np.array([0, 1], dtype=np.int64), pairs)
    return inputs, labels


def generate_synthetic(
    n: int = EXPERIMENT_CONF.SYNTHETIC_SAMPLES,
    size: int = EXPERIMENT_CONF.SYNTHETIC_SIZE,
    seed: int = 0,
    noise: float = EXPERIMENT_CONF.SYNTHETIC_NOISE,
    n_test: int = EXPERIMENT_CONF.SYNTHETIC_TEST_SAMPLES,
    channels: int = EXPERIMENT_CONF.CHANNELS,
    transform: str = EXPERIMENT_CONF.SYNTHETIC_TRANSFORM,
    variation: float = EXPERIMENT_CONF.SYNTHETIC_VARIATION,
    standardize: bool = True,
) -> Dataset:
    """
    Two balanced classes with a planted transformation.

    Every class-0 image is a noisy copy of a jittered random prototype p_k; its
    class-1 partner (the next sample) is `transform` applied to p_k, plus noise.
    With noise=0 each class-1 image is exactly the transform of its partner, so a
    model built from transform-invariant kernels followed by global pooling
    cannot tell the two classes apart.
    """
    if size < 3:
        raise InputError(f"synthetic images must be at least 3x3, got {size}")
    if n < 2 or n % 2 or n_test < 0 or n_test % 2:
        raise InputError(f"sample counts must be even (class pairs), got n={n}, n_test={n_test}")
    t = element_from_name(transform)
    if t.is_identity:
        raise InputError("the planted transform must not be the identity")
    rng = seed_stream(seed, "synthetic")
    prototype = rng.random((channels, size, size))
    train_x, train_y = _synthetic_split(prototype, n, t, rng, noise, variation)
    test_x, test_y = _synthetic_split(prototype, n_test, t, rng, noise, variation)
    metadata = {
        "transform": t.name,
        "pairs": np.arange(n).reshape(-1, 2),
        "noise": noise,
        "variation": variation,
        "seed": seed,
    }
    dataset = Dataset(f"synthetic-{t.name}", Batch(train_x, train_y), Batch(test_x, test_y), 2, metadata)
    return normalize(dataset) if standardize else dataset
