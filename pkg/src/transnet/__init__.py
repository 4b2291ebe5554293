from transnet import util
from transnet import tensor
from transnet import dihedral
from transnet import models
from transnet import training
from transnet import invariance
from transnet import experiments

__all__ = ["util", "tensor", "dihedral", "models", "training", "invariance", "experiments"]
