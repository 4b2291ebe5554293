import numpy as np
import pytest

from transnet.models.params import ConvSpec, init_params
from transnet.models.transnet import TransNetModel
from transnet.dihedral.group import TransformationSet


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def small_architecture(in_channels=2, pools=1, relu=True):
    """Three 3x3 layers, pooling after the first `pools` of them."""
    channels = (in_channels, 4, 5, 6)
    return [ConvSpec(channels[i], channels[i + 1], 3, i < pools, relu) for i in range(3)]


def random_model(transforms, rng, num_classes=3, architecture=None, bias_scale=0.1):
    """Model with random (nonzero) biases so bias handling is exercised too."""
    transforms = TransformationSet(transforms)
    params = init_params(architecture or small_architecture(), num_classes, len(transforms), rng)
    arrays = [a if a.ndim > 1 else rng.normal(0.0, bias_scale, a.shape) for a in params.arrays()]
    return TransNetModel(params.replace_arrays(arrays), transforms)
