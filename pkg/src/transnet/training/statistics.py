import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from transnet.dihedral.group import IDENTITY, DihedralElement, TransformationSet
from transnet.models.transnet import TransNetModel, compile_transformation, forward_full, identity_head_index, prune
from transnet.tensor import ops
from transnet.training import TRAIN_CONF
from transnet.training.config import Batch
from transnet.training.loop import batch_slices, exact_mean, loss_terms, per_sample_transformation_loss, transformation_loss
from transnet.util.exception_handler import InputError
from transnet.util.types import Tensor

logger = logging.getLogger(__name__)


@dataclass
class UnbiasednessResult:
    empirical_mean: float
    full_loss: float
    z_score: float
    standard_error: float
    n_batches: int
    batch_size: int


def unbiasedness_check(
    model: TransNetModel,
    inputs: Tensor,
    labels,
    batch_size: int = TRAIN_CONF.UNBIASED_BATCH_SIZE,
    n_batches: int = TRAIN_CONF.UNBIASED_NUM_BATCHES,
    rng: Union[np.random.Generator, int, None] = None,
    transforms: Optional[Sequence] = None,
    head_map: Optional[Sequence[int]] = None,
    replacement: bool = True,
    exact: bool = False,
) -> UnbiasednessResult:
    """
    Compare the mean sampled transformation loss over `n_batches` batches to the
    loss on the whole dataset.

    Batches are drawn i.i.d. uniformly with replacement; with replacement=False
    each batch is a uniformly random subset instead (batch_size = N gives full
    passes). The batch loss decomposes over samples, so by default it is read
    off per-sample losses computed once; exact=True re-evaluates every batch.
    """
    batch = Batch(inputs, labels)
    n = len(batch)
    if n == 0:
        raise InputError("unbiasedness check needs a nonempty dataset")
    if batch_size < 1 or n_batches < 1:
        raise InputError("batch_size and n_batches must be positive")
    if not replacement and batch_size > n:
        raise InputError(f"cannot draw {batch_size} distinct samples from {n}")
    rng = np.random.default_rng(rng)
    per_sample = per_sample_transformation_loss(model, batch.inputs, batch.labels, transforms, head_map)
    full_loss = exact_mean(per_sample)

    batch_losses = np.empty(n_batches)
    for i in range(n_batches):
        idx = rng.integers(0, n, size=batch_size) if replacement else rng.permutation(n)[:batch_size]
        if exact:
            batch_losses[i] = transformation_loss(model, batch.take(idx), transforms, head_map)
        else:
            batch_losses[i] = exact_mean(per_sample[idx])

    # deviations from the full loss keep the mean exact when every batch equals it
    diff = math.fsum(batch_losses - full_loss) / n_batches
    std = float(np.std(batch_losses, ddof=1)) if n_batches > 1 else 0.0
    se = std / math.sqrt(n_batches)
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return UnbiasednessResult(full_loss + diff, full_loss, z, se, n_batches, batch_size)


def mean_cross_entropy(model: TransNetModel, inputs: Tensor, labels, batch_size: Optional[int] = TRAIN_CONF.EVAL_BATCH_SIZE) -> float:
    """Mean cross-entropy of forward_full over a dataset."""
    batch = Batch(inputs, labels)
    batch.check_labels(model.params.num_classes)
    if len(batch) == 0:
        raise InputError("cannot compute a loss on an empty set")
    losses = np.empty(len(batch))
    for chunk in batch_slices(len(batch), batch_size):
        losses[chunk] = ops.per_sample_cross_entropy(forward_full(model, batch.inputs[chunk]), batch.labels[chunk])
    return exact_mean(losses)


def generalization_ratio(
    model: TransNetModel,
    train_inputs: Tensor,
    train_labels,
    test_inputs: Tensor,
    test_labels,
    predictor: str = "full",
    batch_size: Optional[int] = TRAIN_CONF.EVAL_BATCH_SIZE,
) -> float:
    """
    Test cross-entropy over train cross-entropy.

    predictor="full" scores forward_full (T_m), "identity" the pruned identity head (PT_m).
    """
    if predictor == "identity":
        model = prune(model, identity_head_index(model))
    elif predictor != "full":
        raise InputError(f"predictor must be 'full' or 'identity', got {predictor!r}")
    train_loss = mean_cross_entropy(model, train_inputs, train_labels, batch_size)
    test_loss = mean_cross_entropy(model, test_inputs, test_labels, batch_size)
    if train_loss == 0.0:
        logger.warning(f"train loss is zero (test loss {test_loss:.6g}); generalization ratio reported as +inf")
        return math.inf
    return test_loss / train_loss


@dataclass
class ReductionResult:
    transformation_loss: float
    compiled_losses: np.ndarray  # one per (transform, head) term
    best_term: int
    best_head: int
    best_transform: DihedralElement
    best_loss: float
    holds: bool


def reduction_check(
    model: TransNetModel,
    inputs: Tensor,
    labels,
    transforms: Optional[Sequence] = None,
    head_map: Optional[Sequence[int]] = None,
    tolerance: float = TRAIN_CONF.REDUCTION_TOLERANCE,
    batch_size: Optional[int] = TRAIN_CONF.EVAL_BATCH_SIZE,
) -> ReductionResult:
    """
    Compile every (t, head) term of the objective into a one-head base CNN and
    evaluate it on the untransformed data. The best of them must not lose more
    than the transformation loss (up to `tolerance` for rounding).
    """
    terms = loss_terms(model, transforms, head_map)
    batch = Batch(inputs, labels)
    per_sample = per_sample_transformation_loss(model, batch.inputs, batch.labels, transforms, head_map, batch_size)
    loss_t = exact_mean(per_sample)

    compiled_losses = np.empty(len(terms))
    seen = {}
    for i, (t, j) in enumerate(terms):
        if (t, j) not in seen:
            params = compile_transformation(model.params.with_heads([model.params.heads[j]]), t)
            base = TransNetModel(params, TransformationSet([IDENTITY]))
            seen[(t, j)] = mean_cross_entropy(base, batch.inputs, batch.labels, batch_size)
        compiled_losses[i] = seen[(t, j)]
    best = int(np.argmin(compiled_losses))
    best_loss = float(compiled_losses[best])
    holds = best_loss <= loss_t + tolerance * max(1.0, abs(loss_t))
    return ReductionResult(loss_t, compiled_losses, best, terms[best][1], terms[best][0], best_loss, holds)
