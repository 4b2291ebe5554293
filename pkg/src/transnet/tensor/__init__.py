from transnet.tensor.ops import (
    as_tensor,
    conv2d_output_size,
    conv2d_forward,
    conv2d_backward,
    avgpool2x2_forward,
    avgpool2x2_backward,
    gap_forward,
    gap_backward,
    fc_forward,
    fc_backward,
    relu_forward,
    relu_backward,
    softmax,
    log_softmax,
    logsumexp,
    softmax_cross_entropy,
    per_sample_cross_entropy,
    check_finite,
    numerical_gradient,
    relative_error,
)

__all__ = [
    "as_tensor",
    "conv2d_output_size",
    "conv2d_forward",
    "conv2d_backward",
    "avgpool2x2_forward",
    "avgpool2x2_backward",
    "gap_forward",
    "gap_backward",
    "fc_forward",
    "fc_backward",
    "relu_forward",
    "relu_backward",
    "softmax",
    "log_softmax",
    "logsumexp",
    "softmax_cross_entropy",
    "per_sample_cross_entropy",
    "check_finite",
    "numerical_gradient",
    "relative_error",
]
