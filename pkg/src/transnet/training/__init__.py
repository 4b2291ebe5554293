from transnet.training.config import Batch, TrainingConfig, seed_stream
from transnet.training.optimizer import SGD, StepLR
from transnet.training.augment import augment, augment_batch
from transnet.training.loop import (
    EvaluationResult,
    Trainer,
    TrainingResult,
    evaluate,
    batch_slices,
    exact_mean,
    loss_and_gradients,
    loss_terms,
    make_optimizer,
    per_sample_transformation_loss,
    single_head_loss,
    single_head_step,
    train_step,
    transformation_loss,
)
from transnet.training.statistics import (
    ReductionResult,
    UnbiasednessResult,
    generalization_ratio,
    mean_cross_entropy,
    reduction_check,
    unbiasedness_check,
)

__all__ = [
    "Batch",
    "TrainingConfig",
    "seed_stream",
    "SGD",
    "StepLR",
    "augment",
    "augment_batch",
    "EvaluationResult",
    "Trainer",
    "TrainingResult",
    "evaluate",
    "batch_slices",
    "exact_mean",
    "loss_and_gradients",
    "loss_terms",
    "make_optimizer",
    "per_sample_transformation_loss",
    "single_head_loss",
    "single_head_step",
    "train_step",
    "transformation_loss",
    "ReductionResult",
    "UnbiasednessResult",
    "generalization_ratio",
    "mean_cross_entropy",
    "reduction_check",
    "unbiasedness_check",
]
