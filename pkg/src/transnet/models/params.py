from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from transnet.models import MODEL_CONF
from transnet.tensor.ops import as_tensor
from transnet.util.exception_handler import InputError, ShapeError
from transnet.util.types import Padding, Tensor


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = MODEL_CONF.KERNEL_SIZE
    pool_after: bool = False
    relu: bool = True
    padding: Padding = Padding.same

    def __post_init__(self):
        object.__setattr__(self, "padding", Padding(getattr(self.padding, "value", self.padding)))
        if self.in_channels < 1 or self.out_channels < 1:
            raise InputError(f"channel counts must be positive, got {self.in_channels}->{self.out_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InputError(f"kernel_size must be an odd positive integer, got {self.kernel_size}")

    @property
    def num_parameters(self) -> int:
        return self.out_channels * self.in_channels * self.kernel_size**2 + self.out_channels


@dataclass(frozen=True, eq=False)
class ConvLayer:
    kernels: Tensor  # C_out x C_in x k x k
    bias: Tensor  # C_out
    pool_after: bool = False
    relu: bool = True
    padding: Padding = Padding.same

    def __post_init__(self):
        object.__setattr__(self, "kernels", as_tensor(self.kernels))
        object.__setattr__(self, "bias", as_tensor(self.bias))
        object.__setattr__(self, "padding", Padding(getattr(self.padding, "value", self.padding)))
        w = self.kernels
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ShapeError(f"kernels must be C_out x C_in x k x k with odd k, got {w.shape}")
        if self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias must have shape ({w.shape[0]},), got {self.bias.shape}")

    @property
    def spec(self) -> ConvSpec:
        out_c, in_c, k, _ = self.kernels.shape
        return ConvSpec(in_c, out_c, k, self.pool_after, self.relu, self.padding)

    def replace(self, kernels: Optional[Tensor] = None, bias: Optional[Tensor] = None) -> "ConvLayer":
        return ConvLayer(
            self.kernels if kernels is None else kernels,
            self.bias if bias is None else bias,
            self.pool_after,
            self.relu,
            self.padding,
        )


@dataclass(frozen=True, eq=False)
class Head:
    weight: Tensor  # K x C_last
    bias: Tensor  # K

    def __post_init__(self):
        object.__setattr__(self, "weight", as_tensor(self.weight))
        object.__setattr__(self, "bias", as_tensor(self.bias))
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"head weight {self.weight.shape} and bias {self.bias.shape} do not agree")

    @property
    def num_parameters(self) -> int:
        return self.weight.size + self.bias.size


@dataclass(frozen=True, eq=False)
class ModelParams:
    """
    theta: ordered conv layers (the backbone, followed by GAP) and one or more FC heads.

    Arrays are flattened in declaration order by `arrays()`: kernels and bias of
    every conv layer, then weight and bias of every head. Optimizer state,
    gradients and the checkpoint payload all use that order.
    """

    conv_layers: Tuple[ConvLayer, ...]
    heads: Tuple[Head, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(self.conv_layers))
        object.__setattr__(self, "heads", tuple(self.heads))
        if not self.conv_layers:
            raise InputError("a model needs at least one convolutional layer")
        if not self.heads:
            raise InputError("a model needs at least one head")
        for prev, nxt in zip(self.conv_layers, self.conv_layers[1:]):
            if prev.kernels.shape[0] != nxt.kernels.shape[1]:
                raise ShapeError(
                    f"layer with {prev.kernels.shape[0]} output channels feeds a layer expecting {nxt.kernels.shape[1]}"
                )
        expected = self.heads[0].weight.shape
        if expected[1] != self.feature_dim:
            raise ShapeError(f"heads take {expected[1]} features but the backbone produces {self.feature_dim}")
        for head in self.heads:
            if head.weight.shape != expected:
                raise ShapeError(f"all heads must share shape {expected}, got {head.weight.shape}")

    @property
    def input_channels(self) -> int:
        return self.conv_layers[0].kernels.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.conv_layers[-1].kernels.shape[0]

    @property
    def num_classes(self) -> int:
        return self.heads[0].weight.shape[0]

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def architecture(self) -> List[ConvSpec]:
        return [layer.spec for layer in self.conv_layers]

    def arrays(self) -> List[Tensor]:
        out = []
        for layer in self.conv_layers:
            out.extend([layer.kernels, layer.bias])
        for head in self.heads:
            out.extend([head.weight, head.bias])
        return out

    def replace_arrays(self, arrays: Sequence[Tensor]) -> "ModelParams":
        arrays = list(arrays)
        expected = 2 * (len(self.conv_layers) + len(self.heads))
        if len(arrays) != expected:
            raise InputError(f"expected {expected} arrays, got {len(arrays)}")
        layers = []
        for i, layer in enumerate(self.conv_layers):
            kernels, bias = arrays[2 * i], arrays[2 * i + 1]
            if np.shape(kernels) != layer.kernels.shape:
                raise ShapeError(f"layer {i} kernels must keep shape {layer.kernels.shape}")
            layers.append(layer.replace(kernels, bias))
        offset = 2 * len(self.conv_layers)
        heads = [Head(arrays[offset + 2 * j], arrays[offset + 2 * j + 1]) for j in range(len(self.heads))]
        return ModelParams(layers, heads)

    def map_kernels(self, fn: Callable[[Tensor], Tensor]) -> "ModelParams":
        return ModelParams([layer.replace(kernels=fn(layer.kernels)) for layer in self.conv_layers], self.heads)

    def with_heads(self, heads: Sequence[Head]) -> "ModelParams":
        return ModelParams(self.conv_layers, heads)

    def count_parameters(self) -> int:
        return int(sum(a.size for a in self.arrays()))

    def head_overhead(self) -> int:
        """Parameters added by one extra head: K x C_last + K."""
        return self.num_classes * self.feature_dim + self.num_classes

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.allclose(a, b, rtol=0.0, atol=atol) for a, b in zip(mine, theirs)
        )


def default_architecture(in_channels: int = MODEL_CONF.CHANNELS[0]) -> List[ConvSpec]:
    channels = (in_channels,) + tuple(MODEL_CONF.CHANNELS[1:])
    return [
        ConvSpec(channels[i], channels[i + 1], MODEL_CONF.KERNEL_SIZE, MODEL_CONF.POOL_AFTER[i])
        for i in range(len(channels) - 1)
    ]


def init_params(
    architecture: Sequence[ConvSpec],
    num_classes: int = MODEL_CONF.NUM_CLASSES,
    num_heads: int = 1,
    rng: Union[np.random.Generator, int, None] = None,
    scale: float = MODEL_CONF.INIT_SCALE,
) -> ModelParams:
    """Zero-mean uniform weights scaled by 1/sqrt(fan_in), zero biases."""
    if not architecture:
        raise InputError("a model needs at least one convolutional layer")
    if num_classes < 1 or num_heads < 1:
        raise InputError(f"num_classes and num_heads must be positive, got {num_classes}, {num_heads}")
    rng = np.random.default_rng(rng)
    layers = []
    for spec in architecture:
        fan_in = spec.in_channels * spec.kernel_size**2
        bound = scale / np.sqrt(fan_in)
        kernels = rng.uniform(-bound, bound, size=(spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size))
        layers.append(ConvLayer(kernels, np.zeros(spec.out_channels), spec.pool_after, spec.relu, spec.padding))
    features = architecture[-1].out_channels
    bound = scale / np.sqrt(features)
    heads = [Head(rng.uniform(-bound, bound, size=(num_classes, features)), np.zeros(num_classes)) for _ in range(num_heads)]
    return ModelParams(layers, heads)
