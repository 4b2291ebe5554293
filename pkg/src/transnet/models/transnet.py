"""
The base CNN h = g o GAP o conv_k o ... o conv_1 and its multi-head extension.

A TransNetModel pairs the parameters with one dihedral element per head. Head j
classifies inputs that were transformed by transforms[j]; the full model
averages all heads, each fed its own transformed copy of the input.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from transnet.dihedral.actions import apply_spatial, compile_params
from transnet.dihedral.group import IDENTITY, M, DihedralElement, TransformationSet
from transnet.models.params import ConvSpec, Head, ModelParams, init_params
from transnet.tensor import ops
from transnet.tensor.ops import conv2d_output_size
from transnet.util.exception_handler import InputError, ShapeError
from transnet.util.types import HeadAverage, HeadSelection, Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TransNetModel:
    params: ModelParams
    transforms: TransformationSet

    def __post_init__(self):
        if not isinstance(self.transforms, TransformationSet):
            object.__setattr__(self, "transforms", TransformationSet(self.transforms))
        if len(self.transforms) != self.params.num_heads:
            raise InputError(f"{self.params.num_heads} heads but {len(self.transforms)} transforms")

    @property
    def num_heads(self) -> int:
        return self.params.num_heads

    def with_params(self, params: ModelParams) -> "TransNetModel":
        return TransNetModel(params, self.transforms)

    def __repr__(self):
        arch = "-".join(str(s.out_channels) for s in self.params.architecture)
        return f"TransNetModel(conv={arch}, classes={self.params.num_classes}, heads={self.transforms.names})"


def build_model(
    architecture: Sequence[ConvSpec],
    transforms: Union[TransformationSet, Sequence],
    num_classes: int,
    rng: Union[np.random.Generator, int, None] = None,
) -> TransNetModel:
    transforms = transforms if isinstance(transforms, TransformationSet) else TransformationSet(transforms)
    params = init_params(architecture, num_classes=num_classes, num_heads=len(transforms), rng=rng)
    return TransNetModel(params, transforms)


# --- backbone ---------------------------------------------------------------


@dataclass
class BackboneCache:
    conv_inputs: List[Tensor]
    pre_activations: List[Tensor]
    final_size: int


def backbone_forward(params: ModelParams, x: Tensor, keep_cache: bool = False) -> Tuple[Tensor, Optional[BackboneCache]]:
    """f(x): conv stack then GAP. Returns features (C_last or N x C_last)."""
    x = ops.as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"input must be C x H x W or N x C x H x W, got shape {x.shape}")
    if x.shape[-3] != params.input_channels:
        raise ShapeError(f"input has {x.shape[-3]} channels, model expects {params.input_channels}")
    conv_inputs, pre_activations = [], []
    h = x
    for layer in params.conv_layers:
        z = ops.conv2d_forward(h, layer.kernels, layer.bias, layer.padding)
        if keep_cache:
            conv_inputs.append(h)
            pre_activations.append(z)
        h = ops.relu_forward(z) if layer.relu else z
        if layer.pool_after:
            h = ops.avgpool2x2_forward(h)
    features = ops.gap_forward(h)
    cache = BackboneCache(conv_inputs, pre_activations, h.shape[-1]) if keep_cache else None
    return features, cache


def backbone_backward(params: ModelParams, cache: BackboneCache, grad_features: Tensor) -> List[Tuple[Tensor, Tensor]]:
    """Gradients (kernels, bias) of every conv layer given d loss / d features."""
    g = ops.gap_backward(grad_features, cache.final_size)
    grads: List[Tuple[Tensor, Tensor]] = [None] * len(params.conv_layers)
    for i in reversed(range(len(params.conv_layers))):
        layer = params.conv_layers[i]
        if layer.pool_after:
            g = ops.avgpool2x2_backward(g)
        if layer.relu:
            g = ops.relu_backward(cache.pre_activations[i], g)
        g, grad_kernels, grad_bias = ops.conv2d_backward(cache.conv_inputs[i], layer.kernels, g, layer.padding)
        grads[i] = (grad_kernels, grad_bias)
    return grads


def head_forward(params: ModelParams, head_index: int, features: Tensor) -> Tensor:
    head = params.heads[_check_head(params, head_index)]
    return ops.fc_forward(features, head.weight, head.bias)


def _check_head(params: ModelParams, head_index: int) -> int:
    if not isinstance(head_index, (int, np.integer)) or not 0 <= head_index < params.num_heads:
        raise InputError(f"head index {head_index} out of range for {params.num_heads} heads")
    return int(head_index)


# --- prediction -------------------------------------------------------------


def forward_head(model: TransNetModel, head_index: int, x: Tensor) -> Tensor:
    """h_t(x) for head `head_index`; the caller passes the already transformed input."""
    _check_head(model.params, head_index)
    features, _ = backbone_forward(model.params, x)
    return head_forward(model.params, head_index, features)


def head_logits(model: TransNetModel, x: Tensor) -> List[Tensor]:
    """Logits of every head j on transforms[j](x), sharing backbone passes between equal transforms."""
    features: Dict[DihedralElement, Tensor] = {}
    out = []
    for j, t in enumerate(model.transforms):
        if t not in features:
            features[t], _ = backbone_forward(model.params, apply_spatial(t, x))
        out.append(head_forward(model.params, j, features[t]))
    return out


def forward_full(model: TransNetModel, x: Tensor, average: Union[str, HeadAverage] = HeadAverage.logits) -> Tensor:
    """
    h_T(x) = mean over heads of h_t(t(x)).

    With average="probabilities" the heads' softmax outputs are averaged and the
    log of that mean is returned, so softmax of the result is the averaged
    distribution. The mean is taken in log space and stays finite when every
    head assigns a class a probability below the float64 range.
    """
    average = HeadAverage(getattr(average, "value", average))
    per_head = head_logits(model, x)
    if average is HeadAverage.logits:
        return np.mean(np.stack(per_head), axis=0)
    log_probs = np.stack([ops.log_softmax(z) for z in per_head])
    return ops.logsumexp(log_probs, axis=0) - np.log(len(per_head))


def predict_with_flip_averaging(
    model: TransNetModel, x: Tensor, average: Union[str, HeadAverage] = HeadAverage.logits
) -> Tensor:
    """0.5 * (h(x) + h(m(x))), m the horizontal reflection."""
    return 0.5 * (forward_full(model, x, average) + forward_full(model, apply_spatial(M, x), average))


def predict(model: TransNetModel, x: Tensor, flip_average: bool = False, average=HeadAverage.logits) -> Tensor:
    if flip_average:
        return predict_with_flip_averaging(model, x, average)
    return forward_full(model, x, average)


# --- compilation and pruning ------------------------------------------------


def compile_transformation(params: ModelParams, t: DihedralElement) -> ModelParams:
    """t^-1(theta): forward with the result on x equals forward with theta on t(x)."""
    return compile_params(t, params)


def prune(model: TransNetModel, keep_head: int, compile: bool = True) -> TransNetModel:
    """
    Keep one head. With compile=True its transform is folded into the kernels so
    the pruned model reads untransformed inputs and is a plain base CNN.
    """
    j = _check_head(model.params, keep_head)
    t = model.transforms[j]
    params = model.params.with_heads([model.params.heads[j]])
    if compile and not t.is_identity:
        return TransNetModel(compile_transformation(params, t), TransformationSet([IDENTITY]))
    return TransNetModel(params, TransformationSet([t]))


def prune_heads(model: TransNetModel, keep: Sequence[int]) -> TransNetModel:
    """Smaller ensemble holding the listed heads, transforms kept as they are."""
    if not keep:
        raise InputError("keep at least one head")
    idx = [_check_head(model.params, j) for j in keep]
    params = model.params.with_heads([model.params.heads[j] for j in idx])
    return TransNetModel(params, TransformationSet([model.transforms[j] for j in idx]))


def identity_head_index(model: TransNetModel) -> int:
    for j, t in enumerate(model.transforms):
        if t.is_identity:
            return j
    logger.warning("model has no identity head; falling back to head 0")
    return 0


def head_losses(model: TransNetModel, inputs: Tensor, labels) -> np.ndarray:
    """Mean cross-entropy of every head j on transforms[j](inputs)."""
    return np.array([ops.per_sample_cross_entropy(z, labels).mean() for z in head_logits(model, inputs)])


def select_head(
    model: TransNetModel,
    policy: Union[str, HeadSelection] = HeadSelection.identity,
    inputs: Optional[Tensor] = None,
    labels=None,
) -> int:
    """Head to keep when pruning: the identity head, or the one with the lowest loss on the given data."""
    policy = HeadSelection(getattr(policy, "value", policy))
    if policy is HeadSelection.identity:
        return identity_head_index(model)
    if inputs is None or labels is None:
        raise InputError("selecting the best head needs inputs and labels")
    return int(np.argmin(head_losses(model, inputs, labels)))


# --- accounting -------------------------------------------------------------


def count_parameters(model: Union[TransNetModel, ModelParams]) -> int:
    params = model.params if isinstance(model, TransNetModel) else model
    return params.count_parameters()


def feature_map_sizes(model: Union[TransNetModel, ModelParams], input_size: int) -> List[int]:
    """Spatial size of every conv layer's output for a square input; InputError if the stack cannot run on it."""
    params = model.params if isinstance(model, TransNetModel) else model
    sizes = []
    size = input_size
    for i, spec in enumerate(params.architecture):
        size = conv2d_output_size(size, spec.kernel_size, spec.padding)
        if size < 1:
            raise InputError(f"conv layer {i} leaves no output on a {input_size}x{input_size} input")
        sizes.append(size)
        if spec.pool_after:
            if size % 2:
                raise InputError(f"conv layer {i} outputs {size}x{size}, which 2x2 pooling cannot halve")
            size //= 2
    return sizes


def count_flops(model: Union[TransNetModel, ModelParams], input_size: int, heads_evaluated: Optional[int] = None) -> int:
    """
    Multiply-accumulate count of one prediction on a square input.

    The backbone runs once per evaluated head (each head sees its own transformed
    input); pooling, ReLU and GAP are not counted.
    """
    params = model.params if isinstance(model, TransNetModel) else model
    heads = params.num_heads if heads_evaluated is None else heads_evaluated
    backbone = 0
    for spec, size in zip(params.architecture, feature_map_sizes(params, input_size)):
        backbone += size * size * spec.out_channels * spec.in_channels * spec.kernel_size**2
    head = params.num_classes * params.feature_dim
    return heads * (backbone + head)
