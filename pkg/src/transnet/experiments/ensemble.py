import logging
import os
from typing import List, Sequence, Union

import numpy as np

from transnet.models.checkpoint import load_any
from transnet.models.transnet import TransNetModel, feature_map_sizes, head_logits
from transnet.training.loop import batch_slices
from transnet.util.exception_handler import InputError
from transnet.util.types import Tensor

logger = logging.getLogger(__name__)

ModelSource = Union[TransNetModel, str, os.PathLike]


def _load(source: ModelSource) -> TransNetModel:
    return source if isinstance(source, TransNetModel) else load_any(source)


def _check_members(models: Sequence[TransNetModel], inputs: np.ndarray) -> None:
    """Every member must take `inputs` and agree with the first on classes and heads."""
    if inputs.ndim != 4 or inputs.shape[-1] != inputs.shape[-2]:
        raise InputError(f"ensemble inputs must be N x C x H x W with H = W, got shape {inputs.shape}")
    first = models[0].params
    for i, model in enumerate(models):
        p = model.params
        if p.input_channels != inputs.shape[1]:
            raise InputError(f"member {i} expects {p.input_channels} channels, inputs have {inputs.shape[1]}")
        if (p.num_classes, p.num_heads) != (first.num_classes, first.num_heads):
            raise InputError(
                f"incompatible members: {p.num_classes} classes / {p.num_heads} heads "
                f"vs {first.num_classes} / {first.num_heads}"
            )
        try:
            feature_map_sizes(p, inputs.shape[-1])
        except InputError as e:
            raise InputError(f"member {i} cannot run on {inputs.shape[-1]}x{inputs.shape[-1]} images: {e}") from e


def instance_logits(models: Sequence[TransNetModel], inputs: Tensor, batch_size: int = 256) -> List[np.ndarray]:
    """
    Logits of every processed instance, in order: head 0..m-1 of the first model,
    then the next model. A multi-head model thus contributes m instances.
    """
    n = np.asarray(inputs).shape[0]
    out = []
    for model in models:
        per_head = [np.empty((n, model.params.num_classes)) for _ in range(model.num_heads)]
        for chunk in batch_slices(n, batch_size):
            for j, z in enumerate(head_logits(model, inputs[chunk])):
                per_head[j][chunk] = z
        out.extend(per_head)
    return out


def evaluate_ensemble(
    checkpoints: Sequence[ModelSource], ensemble_size: int, inputs: Tensor, labels, batch_size: int = 256
) -> np.ndarray:
    """
    Accuracy of the mean-logit ensemble of the first s instances, for s = 1..ensemble_size.
    """
    models = [_load(c) for c in checkpoints]
    if not models:
        raise InputError("no checkpoints given")
    inputs = np.asarray(inputs, dtype=np.float64)
    _check_members(models, inputs)
    available = sum(m.num_heads for m in models)
    if ensemble_size < 1 or ensemble_size > available:
        raise InputError(f"ensemble size {ensemble_size} needs between 1 and {available} instances")
    labels = np.asarray(labels)
    logits = instance_logits(models, inputs, batch_size)[:ensemble_size]
    running = np.zeros_like(logits[0])
    curve = np.empty(ensemble_size)
    for s, z in enumerate(logits, start=1):
        running += z
        curve[s - 1] = float(np.mean((running / s).argmax(axis=-1) == labels))
    logger.info(f"ensemble accuracy over {ensemble_size} instances: {np.round(curve, 4).tolist()}")
    return curve
