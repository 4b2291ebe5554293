from enum import Enum

import numpy as np

# Dense float64 array, row-major. Kernels are C_out x C_in x k x k, images C x H x W
# (optionally with a leading batch axis).
Tensor = np.ndarray


class TrainingMode(Enum):
    base = "base"
    transnet = "transnet"
    single_head = "single_head"  # "algorithm only"
    arch_only = "arch_only"  # "architecture only", heads fed the identity multi-set

    @classmethod
    def parse(cls, value) -> "TrainingMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace("-", "_"))


class Metric(Enum):
    norm = "norm"
    pearson = "pearson"
    cosine = "cosine"


class GroupName(Enum):
    c4 = "c4"
    d4 = "d4"


class Padding(Enum):
    same = "same"
    valid = "valid"


class HeadAverage(Enum):
    logits = "logits"
    probabilities = "probabilities"


class HeadSelection(Enum):
    identity = "identity"
    best = "best"
