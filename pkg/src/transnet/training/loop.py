"""
Training of TransNet models.

A training objective is a list of loss terms (t, j): head j classifies t(x).
TransNet mode pairs transforms[j] with head j, the single-head ablation pairs
every transform with head 0. The loss of a batch is the mean over terms of the
batch-mean cross-entropy, so the 1/m factor appears once, in that average.
"""

import logging
import math
import os
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from transnet.dihedral.actions import apply_spatial
from transnet.dihedral.group import DihedralElement, TransformationSet
from transnet.models.params import ConvSpec
from transnet.models.transnet import (
    TransNetModel,
    backbone_backward,
    backbone_forward,
    build_model,
    head_logits,
    predict,
)
from transnet.tensor import ops
from transnet.training.augment import augment_batch
from transnet.training.config import Batch, TrainingConfig, seed_stream
from transnet.training.optimizer import SGD, StepLR
from transnet.util.exception_handler import DivergenceError, InputError, timing_decorator
from transnet.util.logger import setup_logging
from transnet.util.types import HeadAverage, Tensor

if TYPE_CHECKING:
    from transnet.training.statistics import ReductionResult

logger = logging.getLogger(__name__)

LossTerms = List[Tuple[DihedralElement, int]]


def loss_terms(
    model: TransNetModel, transforms: Optional[Sequence] = None, head_map: Optional[Sequence[int]] = None
) -> LossTerms:
    """
    Resolve the (transform, head) pairs of an objective.

    Without `transforms` the model's own pairing is used. With transforms but no
    head_map, a one-head model uses head 0 for all of them and an m-head model
    pairs them one to one.
    """
    if transforms is None:
        return [(t, j) for j, t in enumerate(model.transforms)]
    transforms = transforms if isinstance(transforms, TransformationSet) else TransformationSet(transforms)
    if head_map is None:
        if model.num_heads == 1:
            head_map = [0] * len(transforms)
        elif model.num_heads == len(transforms):
            head_map = list(range(len(transforms)))
        else:
            raise InputError(f"cannot pair {len(transforms)} transforms with {model.num_heads} heads")
    head_map = list(head_map)
    if len(head_map) != len(transforms):
        raise InputError(f"{len(transforms)} transforms but {len(head_map)} head indices")
    for j in head_map:
        if not 0 <= j < model.num_heads:
            raise InputError(f"head index {j} out of range for {model.num_heads} heads")
    return list(zip(transforms, head_map))


def _group_by_transform(terms: LossTerms) -> "OrderedDict[DihedralElement, List[int]]":
    groups: "OrderedDict[DihedralElement, List[int]]" = OrderedDict()
    for i, (t, _) in enumerate(terms):
        groups.setdefault(t, []).append(i)
    return groups


def batch_slices(n: int, size: Optional[int]):
    size = n if not size else size
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def exact_mean(values) -> float:
    """Correctly rounded mean, independent of the order of `values`."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise InputError("mean of an empty set")
    return math.fsum(values) / values.size


def per_sample_transformation_loss(
    model: TransNetModel,
    inputs: Tensor,
    labels,
    transforms: Optional[Sequence] = None,
    head_map: Optional[Sequence[int]] = None,
    batch_size: Optional[int] = None,
) -> np.ndarray:
    """(1/m) sum over terms of the cross-entropy of head j on t(x_k), for every sample k."""
    batch = Batch(inputs, labels)
    batch.check_labels(model.params.num_classes)
    terms = loss_terms(model, transforms, head_map)
    groups = _group_by_transform(terms)
    out = np.zeros(len(batch))
    for chunk in batch_slices(len(batch), batch_size):
        x, y = batch.inputs[chunk], batch.labels[chunk]
        total = np.zeros(len(y))
        for t, idxs in groups.items():
            features, _ = backbone_forward(model.params, apply_spatial(t, x))
            for i in idxs:
                head = model.params.heads[terms[i][1]]
                total += ops.per_sample_cross_entropy(ops.fc_forward(features, head.weight, head.bias), y)
        out[chunk] = total / len(terms)
    return out


def transformation_loss(
    model: TransNetModel, batch: Batch, transforms: Optional[Sequence] = None, head_map: Optional[Sequence[int]] = None
) -> float:
    """L_T(h_T, B): mean over terms of the batch-mean cross-entropy."""
    return float(np.mean(per_sample_transformation_loss(model, batch.inputs, batch.labels, transforms, head_map)))


def single_head_loss(model: TransNetModel, batch: Batch, transforms: Sequence) -> float:
    """L(h, B) averaged over all transformed copies of the batch, for a one-head model."""
    _require_single_head(model)
    return transformation_loss(model, batch, transforms, [0] * len(transforms))


def loss_and_gradients(
    model: TransNetModel, batch: Batch, transforms: Optional[Sequence] = None, head_map: Optional[Sequence[int]] = None
) -> Tuple[float, np.ndarray, List[Tensor]]:
    """
    Loss, per-term losses and gradients (in `params.arrays()` order).

    The backbone runs once per distinct transform; its gradient sums the
    contributions of all heads reading it, accumulated in term order.
    """
    params = model.params
    batch.check_labels(params.num_classes)
    terms = loss_terms(model, transforms, head_map)
    n_terms = len(terms)
    conv_grads = [[np.zeros_like(layer.kernels), np.zeros_like(layer.bias)] for layer in params.conv_layers]
    head_grads = [[np.zeros_like(head.weight), np.zeros_like(head.bias)] for head in params.heads]
    term_losses = np.zeros(n_terms)

    for t, idxs in _group_by_transform(terms).items():
        features, cache = backbone_forward(params, apply_spatial(t, batch.inputs), keep_cache=True)
        grad_features = np.zeros_like(features)
        for i in idxs:
            j = terms[i][1]
            head = params.heads[j]
            logits = ops.fc_forward(features, head.weight, head.bias)
            term_losses[i], grad_logits = ops.softmax_cross_entropy(logits, batch.labels)
            grad_in, grad_w, grad_b = ops.fc_backward(features, head.weight, grad_logits / n_terms)
            grad_features += grad_in
            head_grads[j][0] += grad_w
            head_grads[j][1] += grad_b
        for layer_grads, (grad_k, grad_b) in zip(conv_grads, backbone_backward(params, cache, grad_features)):
            layer_grads[0] += grad_k
            layer_grads[1] += grad_b

    grads = [g for pair in conv_grads for g in pair] + [g for pair in head_grads for g in pair]
    return float(term_losses.mean()), term_losses, grads


def make_optimizer(config: TrainingConfig, model: TransNetModel) -> SGD:
    mask = None if config.decay_biases else [a.ndim > 1 for a in model.params.arrays()]
    return SGD(momentum=config.momentum, weight_decay=config.weight_decay, decay_mask=mask)


def train_step(
    model: TransNetModel,
    batch: Batch,
    optimizer: SGD,
    lr: float,
    transforms: Optional[Sequence] = None,
    head_map: Optional[Sequence[int]] = None,
) -> Tuple[TransNetModel, float]:
    """One SGD update on the sampled transformation loss. Returns the new model and the pre-update loss."""
    loss, term_losses, grads = loss_and_gradients(model, batch, transforms, head_map)
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError(
            f"non-finite training loss {loss} after {optimizer.steps} steps (per-term losses {term_losses.tolist()}, lr {lr})"
        )
    arrays = optimizer.step(model.params.arrays(), grads, lr)
    return model.with_params(model.params.replace_arrays(arrays)), loss


def _require_single_head(model: TransNetModel) -> None:
    if model.num_heads != 1:
        raise InputError(f"single-head training needs exactly one head, model has {model.num_heads}")


def single_head_step(
    model: TransNetModel, batch: Batch, optimizer: SGD, lr: float, transforms: Sequence
) -> Tuple[TransNetModel, float]:
    """train_step for one shared head fed every transformed copy of the batch."""
    _require_single_head(model)
    transforms = transforms if isinstance(transforms, TransformationSet) else TransformationSet(transforms)
    return train_step(model, batch, optimizer, lr, transforms, [0] * len(transforms))


# --- evaluation -------------------------------------------------------------


@dataclass
class EvaluationResult:
    loss: float
    accuracy: float
    head_losses: np.ndarray
    head_accuracies: np.ndarray

    def as_row(self, prefix: str) -> Dict[str, float]:
        row = {f"{prefix}_loss": self.loss, f"{prefix}_acc": self.accuracy}
        for j, loss in enumerate(self.head_losses):
            row[f"{prefix}_head{j}_loss"] = float(loss)
        return row


def evaluate(
    model: TransNetModel,
    inputs: Tensor,
    labels,
    flip_average: bool = False,
    average: HeadAverage = HeadAverage.logits,
    batch_size: Optional[int] = 256,
) -> EvaluationResult:
    """Cross-entropy and accuracy of the full model and of every head on its own transform."""
    batch = Batch(inputs, labels)
    batch.check_labels(model.params.num_classes)
    n = len(batch)
    if n == 0:
        raise InputError("cannot evaluate on an empty set")
    full_losses, correct = np.zeros(n), np.zeros(n, dtype=bool)
    head_ce = np.zeros((model.num_heads, n))
    head_correct = np.zeros((model.num_heads, n), dtype=bool)
    for chunk in batch_slices(n, batch_size):
        x, y = batch.inputs[chunk], batch.labels[chunk]
        logits = predict(model, x, flip_average=flip_average, average=average)
        full_losses[chunk] = ops.per_sample_cross_entropy(logits, y)
        correct[chunk] = logits.argmax(axis=-1) == y
        for j, z in enumerate(head_logits(model, x)):
            head_ce[j, chunk] = ops.per_sample_cross_entropy(z, y)
            head_correct[j, chunk] = z.argmax(axis=-1) == y
    return EvaluationResult(
        loss=exact_mean(full_losses),
        accuracy=float(correct.mean()),
        head_losses=np.array([exact_mean(row) for row in head_ce]),
        head_accuracies=head_correct.mean(axis=1),
    )


# --- trainer ----------------------------------------------------------------


@dataclass
class TrainingResult:
    model: TransNetModel
    history: pd.DataFrame
    iterations: int
    reduction: Optional["ReductionResult"] = None


class Trainer:
    """Runs the epoch loop of one configuration: shuffle, augment, step, evaluate, log."""

    def __init__(self, config: TrainingConfig, log_path: Optional[str] = None, progress: bool = True):
        self.config = config
        self.log_path = log_path
        self.progress = progress
        self.logger = setup_logging()

    def init_model(self, architecture: Sequence[ConvSpec], num_classes: int) -> TransNetModel:
        return build_model(
            architecture, self.config.model_transforms, num_classes, rng=seed_stream(self.config.seed, "init")
        )

    def step(self, model: TransNetModel, batch: Batch, optimizer: SGD, lr: float) -> Tuple[TransNetModel, float]:
        return train_step(model, batch, optimizer, lr, self.config.train_transforms, self.config.head_map)

    @timing_decorator
    def fit(self, model: TransNetModel, train: Batch, test: Optional[Batch] = None) -> TrainingResult:
        from transnet.training.statistics import reduction_check

        config = self.config
        train.check_labels(model.params.num_classes)
        shuffle_rng = seed_stream(config.seed, "shuffle")
        augment_rng = seed_stream(config.seed, "augment")
        optimizer = make_optimizer(config, model)
        schedule = StepLR(config.learning_rate, config.milestones, config.lr_decay)
        n = len(train)
        rows: List[dict] = []
        iterations = 0
        start = time.time()
        self.logger.info(f"training {config.label} on {n} samples: {model!r}")

        for epoch in tqdm(range(config.epochs), desc=f"Training {config.label}", disable=not self.progress):
            lr = schedule.lr_at(epoch)
            order = shuffle_rng.permutation(n)
            for chunk in batch_slices(n, config.batch_size):
                if config.max_iterations is not None and iterations >= config.max_iterations:
                    break
                idx = order[chunk]
                inputs = augment_batch(train.inputs[idx], augment_rng, config.flip_prob, config.pad_crop)
                model, _ = self.step(model, Batch(inputs, train.labels[idx]), optimizer, lr)
                iterations += 1
            row = self._epoch_row(epoch, lr, model, train, test, start)
            rows.append(row)
            if self.progress:
                tqdm.write(
                    f"Epoch {epoch + 1}, lr {lr:.4g}, train loss {row['train_loss']:.4f}, "
                    f"train acc {row['train_acc']:.4f}, test acc {row.get('test_acc', float('nan')):.4f}"
                )
            self._write_log(rows)
            if config.max_iterations is not None and iterations >= config.max_iterations:
                break

        reduction = reduction_check(
            model, train.inputs, train.labels, config.train_transforms, config.head_map, batch_size=config.eval_batch_size
        )
        if not reduction.holds:
            self.logger.warning(
                f"best compiled head loss {reduction.best_loss:.6g} exceeds transformation loss {reduction.transformation_loss:.6g}"
            )
        return TrainingResult(model, pd.DataFrame(rows), iterations, reduction)

    def _epoch_row(self, epoch, lr, model, train: Batch, test: Optional[Batch], start: float) -> dict:
        config = self.config
        row = {"epoch": epoch + 1, "lr": lr}
        train_eval = evaluate(model, train.inputs, train.labels, False, config.head_average, config.eval_batch_size)
        row.update(train_eval.as_row("train"))
        if test is not None and len(test):
            test_eval = evaluate(
                model, test.inputs, test.labels, config.flip_average_eval, config.head_average, config.eval_batch_size
            )
            row.update(test_eval.as_row("test"))
        else:
            row.update({"test_loss": float("nan"), "test_acc": float("nan")})
        row["wall_time_s"] = time.time() - start
        return row

    def _write_log(self, rows: List[dict]) -> None:
        if self.log_path is None:
            return
        os.makedirs(os.path.dirname(os.path.abspath(self.log_path)), exist_ok=True)
        pd.DataFrame(rows).to_csv(self.log_path, index=False, encoding="utf-8")
